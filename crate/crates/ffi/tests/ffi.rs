use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ssm::data::ToyTask;
use ssm::infer::{InferenceConfig, InitPolicy};
use ssm::report::{self, RunConfig};
use ssm_ffi::*;

fn last_error() -> String {
    let p = ssm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn train_tiny(dir: &Path) -> (CString, CString, RunConfig, ssm::data::Dataset) {
    let mut cfg = RunConfig::for_task(ToyTask::Linear);
    cfg.samples = 256;
    cfg.epochs = 2;
    cfg.pretrain_epochs = 2;
    cfg.hidden = 8;
    let ds = report::prepare_data(&cfg).unwrap();
    let fitted = report::fit(&cfg, &ds).unwrap();
    let score = dir.join("score.ckpt");
    let fphi = dir.join("fphi.ckpt");
    fitted.checkpoint.save(&score).unwrap();
    fitted.conditioner.to_checkpoint().unwrap().save(&fphi).unwrap();
    let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
    (c(&score), c(&fphi), cfg, ds)
}

fn load(score: &CString, fphi: &CString) -> *mut SsmModel {
    let mut model = ptr::null_mut();
    let status = unsafe { ssm_model_load(score.as_ptr(), fphi.as_ptr(), &mut model) };
    assert_eq!(status, SsmStatus::Ok);
    assert!(!model.is_null());
    model
}

#[test]
fn load_predict_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let (score, fphi, cfg, _) = train_tiny(dir.path());
    let model = load(&score, &fphi);
    let (mut m, mut d, mut l) = (0usize, 0usize, 0usize);
    assert_eq!(unsafe { ssm_model_dims(model, &mut m, &mut d, &mut l) }, SsmStatus::Ok);
    assert_eq!((m, d, l), (1, 1, cfg.levels));

    let mut opts = std::mem::MaybeUninit::<SsmInferOptions>::uninit();
    assert_eq!(unsafe { ssm_infer_options_default(model, opts.as_mut_ptr()) }, SsmStatus::Ok);
    let opts = unsafe { opts.assume_init() };
    assert_eq!(opts.epsilon, cfg.epsilon);
    assert_eq!(opts.last_steps, 30);
    assert_eq!(opts.repeats, 1);
    assert!(opts.fast && !opts.use_noise);

    let xs = [-4.0, -1.0, 0.5, 3.0];
    let mut out = [0.0; 4];
    let status = unsafe { ssm_model_predict(model, xs.as_ptr(), 4, &opts, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, SsmStatus::Ok, "{}", last_error());
    assert!(ssm_last_error().is_null());

    let mut null_opts = [0.0; 4];
    let status = unsafe { ssm_model_predict(model, xs.as_ptr(), 4, ptr::null(), null_opts.as_mut_ptr(), 4) };
    assert_eq!(status, SsmStatus::Ok);
    assert_eq!(out, null_opts);

    let ckpt = ssm::model::ScoreCheckpoint::load(score.to_str().unwrap()).unwrap();
    let cond = ssm::model::PretrainNet::load(fphi.to_str().unwrap()).unwrap();
    let mut ic = InferenceConfig::new(&ckpt.schedule, opts.epsilon, opts.last_steps, opts.step_cap, opts.gamma).unwrap();
    ic.seed = opts.seed;
    ic.y0 = InitPolicy::Zeros;
    let xs_arr = ndarray::Array2::from_shape_vec((4, 1), xs.to_vec()).unwrap();
    let expect = report::predict_raw(&ckpt, &cond, xs_arr.view(), &ic, 1).unwrap();
    for (a, b) in out.iter().zip(expect.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    unsafe { ssm_model_free(model) };
    unsafe { ssm_model_free(ptr::null_mut()) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/score.ckpt").unwrap();
    let status = unsafe { ssm_model_load(missing.as_ptr(), missing.as_ptr(), &mut model) };
    assert_eq!(status, SsmStatus::Io);
    assert!(last_error().contains("nonexistent"));
    assert!(model.is_null());

    let status = unsafe { ssm_model_load(ptr::null(), missing.as_ptr(), &mut model) };
    assert_eq!(status, SsmStatus::NullPointer);
    assert!(last_error().contains("score_path"));

    let status = unsafe { ssm_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(status, SsmStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let g = CString::new(garbage.to_str().unwrap()).unwrap();
    let status = unsafe { ssm_model_load(g.as_ptr(), g.as_ptr(), &mut model) };
    assert_eq!(status, SsmStatus::Format, "{}", last_error());

    let mut sig = [0.0; 3];
    let status = unsafe { ssm_schedule_sigmas(0.01, 1.0, 3, sig.as_mut_ptr()) };
    assert_eq!(status, SsmStatus::Config);
}

#[test]
fn predict_checks_buffer_length() {
    let dir = tempfile::tempdir().unwrap();
    let (score, fphi, _, _) = train_tiny(dir.path());
    let model = load(&score, &fphi);
    let xs = [0.0, 1.0];
    let mut out = [0.0; 3];
    let status = unsafe { ssm_model_predict(model, xs.as_ptr(), 2, ptr::null(), out.as_mut_ptr(), 3) };
    assert_eq!(status, SsmStatus::InvalidArgument);
    assert!(last_error().contains("out_len"));
    unsafe { ssm_model_free(model) };
}

#[test]
fn schedule_and_theory_helpers() {
    let mut sig = [0.0; 3];
    assert_eq!(unsafe { ssm_schedule_sigmas(1.0, 0.01, 3, sig.as_mut_ptr()) }, SsmStatus::Ok);
    assert!((sig[1] - 0.1).abs() < 1e-15);
    assert!((sig[2] - 0.01).abs() < 1e-15);

    let (y0, target) = ([1.0, 3.0], [0.0, 1.0]);
    let mut y = [0.0; 2];
    let status = unsafe { ssm_closed_form_iterate(y0.as_ptr(), target.as_ptr(), 2, 0.5, 3, y.as_mut_ptr()) };
    assert_eq!(status, SsmStatus::Ok);
    assert_eq!(y, [0.125, 1.25]);

    let mut steps = 0usize;
    assert_eq!(unsafe { ssm_min_last_steps(0.0, 1, 1e-4, 0.5, &mut steps) }, SsmStatus::Ok);
    assert_eq!(steps, 1);
    assert_eq!(unsafe { ssm_min_last_steps(1e-6, 1, 1e-3, 0.5, &mut steps) }, SsmStatus::Ok);
    // ceil(log_0.5(1e-6 / (5e-4 + 1e-6))) = ceil(8.97)
    assert_eq!(steps, 9);

    let mut passed = false;
    assert_eq!(unsafe { ssm_theory_verify(200, 7, &mut passed) }, SsmStatus::Ok);
    assert!(passed);
    assert_eq!(unsafe { ssm_theory_verify(0, 7, &mut passed) }, SsmStatus::Config);

    let v = unsafe { CStr::from_ptr(ssm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c_and_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("ssm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ssm_model_load",
        "ssm_model_free",
        "ssm_model_dims",
        "ssm_model_predict",
        "ssm_infer_options_default",
        "ssm_last_error",
        "ssm_schedule_sigmas",
        "ssm_closed_form_iterate",
        "ssm_min_last_steps",
        "ssm_theory_verify",
        "typedef struct SsmModel SsmModel",
        "SSM_STATUS_OK = 0",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let out = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
        .expect("C compiler");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap();
    assert!(lib_dir.join("libssm_ffi.a").exists(), "no static library in {}", lib_dir.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let out = Command::new("cc")
        .arg(manifest.join("examples").join("smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(lib_dir.join("libssm_ffi.a"))
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .expect("C compiler");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).contains("sigma_L=0.0100"));
}

#include <math.h>
#include <stdio.h>

#include "ssm.h"

int main(void) {
    double sigmas[10];
    if (ssm_schedule_sigmas(1.0, 0.01, 10, sigmas) != SSM_STATUS_OK) {
        fprintf(stderr, "%s\n", ssm_last_error());
        return 1;
    }
    double y0[1] = {1.0}, target[1] = {0.0}, y[1];
    if (ssm_closed_form_iterate(y0, target, 1, 0.5, 3, y) != SSM_STATUS_OK || fabs(y[0] - 0.125) > 1e-15) {
        return 2;
    }
    bool passed = false;
    if (ssm_theory_verify(100, 1, &passed) != SSM_STATUS_OK || !passed) {
        return 3;
    }
    SsmModel *model = NULL;
    if (ssm_model_load("/nonexistent", "/nonexistent", &model) != SSM_STATUS_IO || model != NULL) {
        return 4;
    }
    printf("ssm %s: sigma_L=%.4f\n", ssm_version(), sigmas[9]);
    return 0;
}

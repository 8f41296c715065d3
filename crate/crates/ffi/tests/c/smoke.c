#include <stdio.h>
#include <string.h>
#include "mvscale.h"

int main(void) {
    double a[4] = {0.0, 1.0, 2.0, 3.0};
    double b[4] = {1.0, 2.0, 3.0, 4.0};
    MvsEnsemble *ea = NULL, *eb = NULL;
    if (mvs_ensemble_new(1, 4, a, &ea) != MVS_STATUS_OK) return 1;
    if (mvs_ensemble_new(1, 4, b, &eb) != MVS_STATUS_OK) return 2;
    double w = 0.0;
    bool approx = true;
    if (mvs_wasserstein2(ea, eb, &w, &approx) != MVS_STATUS_OK) return 3;
    if (w < 0.999999 || w > 1.000001 || approx) return 4;

    MvsModel *m = NULL;
    if (mvs_model_from_json("{\"name\": \"nope\"}", &m) != MVS_STATUS_VALIDATION) return 5;
    if (mvs_last_error_message() == NULL) return 6;
    if (mvs_model_from_json("{\"name\": \"linear\"}", &m) != MVS_STATUS_OK) return 7;
    size_t n, k, dn, dk;
    if (mvs_model_dims(m, &n, &k, &dn, &dk) != MVS_STATUS_OK || n != 1 || k != 1) return 8;

    MvsEnsemble *xs = NULL, *ys = NULL;
    MvsStatus s = mvs_simulate(m, ea, ea, "{\"epsilon\": 0.1, \"delta\": 0.01}",
                               "{\"dt_macro\": 0.01, \"horizon\": 0.1, \"n_particles\": 4}", 0, &xs, &ys);
    if (s != MVS_STATUS_OK || mvs_ensemble_count(xs) != 4) return 9;
    printf("ok %s %f\n", mvs_version(), w);
    mvs_ensemble_free(xs);
    mvs_ensemble_free(ys);
    mvs_model_free(m);
    mvs_ensemble_free(ea);
    mvs_ensemble_free(eb);
    return 0;
}

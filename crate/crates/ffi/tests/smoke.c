#include <stdio.h>
#include <string.h>
#include "otac.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            const char *e = otac_last_error();                        \
            fprintf(stderr, "check failed: %s (%s)\n", #cond, e ? e : ""); \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    const char *toml =
        "schemes = [\"NOC\", \"OTA-C\"]\n"
        "n_agents = 4\niterations = 20\nruns = 1\nlog_stride = 10\n"
        "[model]\nkernels = 1\nfeatures = 3\nwidths = [500.0]\n"
        "[dataset]\ngrid_per_axis = 3\n";
    OtacConfig *cfg = NULL;
    CHECK(otac_config_from_toml(toml, &cfg) == OTAC_STATUS_OK);
    OtacResult *res = NULL;
    CHECK(otac_run(cfg, &res) == OTAC_STATUS_OK);
    size_t n = 0;
    CHECK(otac_result_scheme_count(res, &n) == OTAC_STATUS_OK && n == 2);
    char *csv = NULL;
    CHECK(otac_result_csv(res, &csv) == OTAC_STATUS_OK);
    CHECK(strncmp(csv, "Iter,NOC,OTA-C\n", 15) == 0);
    otac_string_free(csv);
    double nmse = 0.0;
    CHECK(otac_result_final_nmse_db(res, 5, &nmse) == OTAC_STATUS_OUT_OF_RANGE);
    CHECK(otac_last_error() != NULL);
    otac_result_free(res);
    otac_config_free(cfg);

    OtacConfig *bad = NULL;
    CHECK(otac_config_from_toml("runs = 0", &bad) == OTAC_STATUS_CONFIG);
    int passed = 0;
    CHECK(otac_verify("equivalence", 5, 0, 7, &passed, NULL) == OTAC_STATUS_OK && passed == 1);
    printf("ok %s\n", otac_version());
    return 0;
}

#include <stdio.h>
#include <string.h>
#include "fairlens.h"

int main(void) {
    double a[] = {-10.0, 0.0, 5.0, 20.0};
    double b[] = {1.0, 8.0, 30.0};
    FlDistribution *da = NULL, *db = NULL;
    if (fl_distribution_new("a", a, 4, &da) != FL_STATUS_OK) return 1;
    if (fl_distribution_new("b", b, 3, &db) != FL_STATUS_OK) return 1;

    double w = 0.0, s = 0.0;
    if (fl_wasserstein1(da, db, &w) != FL_STATUS_OK) return 1;
    if (fl_signed_distance(db, da, &s) != FL_STATUS_OK) return 1;
    printf("w1 %.17g\nsigned %.17g\n", w, s);

    FlStatus st = fl_ita(50.0, 0.0, 0.0, &w);
    const char *msg = fl_last_error_message();
    printf("ita status %d message %s\n", (int)st, msg ? msg : "(none)");
    if (fl_wasserstein1(NULL, db, &w) != FL_STATUS_NULL_POINTER) return 1;

    fl_distribution_free(da);
    fl_distribution_free(db);
    printf("version %s\n", fl_version());
    return 0;
}

/* Drive one foggy episode with a brake-when-close rule and print a summary. */
#include <stdio.h>
#include "edgedrive.h"

int main(void) {
    EdSimulator *sim = NULL;
    if (ed_simulator_new("{\"scenario\": {\"max_ticks\": 200}}", 1, 42, &sim) != ED_STATUS_OK) {
        fprintf(stderr, "create failed: %s\n", ed_last_error());
        return 1;
    }
    double obs[8];
    double total = 0.0;
    int collided = 0;
    unsigned ticks = 0;
    EdStep step = {0};
    while (!step.done) {
        if (ed_simulator_observation(sim, obs, ed_observation_len()) != ED_STATUS_OK) {
            fprintf(stderr, "observation failed: %s\n", ed_last_error());
            ed_simulator_free(sim);
            return 1;
        }
        /* obs[0] is gap / 100 m, obs[1] closing speed / 20 m/s */
        uint32_t action = (obs[0] < 0.3 && obs[1] > 0.0) ? 4 : 2;
        if (ed_simulator_step(sim, action, &step) != ED_STATUS_OK) {
            fprintf(stderr, "step failed: %s\n", ed_last_error());
            ed_simulator_free(sim);
            return 1;
        }
        total += step.reward;
        collided |= step.collided;
        ticks++;
    }
    EdVehicle ego;
    ed_simulator_ego(sim, &ego);
    printf("edgedrive %s: %u ticks, x=%.1f m, reward %.2f, collided %d\n", ed_version(), ticks, ego.x, total, collided);
    ed_simulator_free(sim);
    return 0;
}

#include <math.h>
#include <stdio.h>
#include <string.h>

#include "aitwin.h"

static int fail(const char *what) {
    const char *msg = aitwin_last_error();
    fprintf(stderr, "%s failed: %s\n", what, msg ? msg : "(no message)");
    return 1;
}

int main(void) {
    double values[] = {3.0, 3.5, 4.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.5, 3.0, 4.5, 4.0, 2.0, 3.0, 3.5};
    AitwinRmAnova rm;
    if (aitwin_rm_anova(values, 5, 3, &rm) != AITWIN_STATUS_OK) return fail("rm_anova");
    printf("F(%g, %g) = %.4f, p = %.4f\n", rm.df1, rm.df2, rm.f, rm.p);

    double p;
    if (aitwin_tail_prob_t(2.086, 20.0, &p) != AITWIN_STATUS_OK) return fail("tail_prob_t");
    if (fabs(p - 0.05) > 1e-3) return fail("tail_prob_t value");

    int answers[25];
    for (int i = 0; i < 25; i++) answers[i] = 4;
    AitwinScores s;
    const uint8_t none[1] = {0};
    if (aitwin_score_survey(answers, 25, none, 0, &s) != AITWIN_STATUS_OK) return fail("score_survey");
    if (s.emotional != 4.0 || s.cognitive != 4.0 || s.behavioral != 4.0) return fail("score_survey value");

    AitwinDialogue *d = aitwin_dialogue_new();
    aitwin_dialogue_push(d, AITWIN_SPEAKER_ASSISTANT, "Hello! How can I help you today?");
    aitwin_dialogue_push(d, AITWIN_SPEAKER_USER, "I want make reservation.");
    char *prompt = NULL;
    if (aitwin_render_prompt(AITWIN_TEMPLATE_CHAT, "task-1", d, &prompt) != AITWIN_STATUS_OK) return fail("render_prompt");
    int grounded = strstr(prompt, "USER: I want make reservation.") != NULL;
    aitwin_string_free(prompt);
    aitwin_dialogue_free(d);
    if (!grounded) return fail("render_prompt content");

    char *goals = NULL;
    if (aitwin_parse_task_results("{\"task_results\": [{\"goal_number\": 7, \"completed\": true}]}", false, &goals) !=
        AITWIN_STATUS_SCHEMA_ERROR)
        return fail("parse_task_results rejection");

    printf("ok %s\n", aitwin_version());
    return 0;
}

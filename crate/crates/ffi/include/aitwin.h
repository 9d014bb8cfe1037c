#ifndef AITWIN_H
#define AITWIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AitwinStatus {
  AITWIN_STATUS_OK = 0,
  AITWIN_STATUS_NULL_POINTER = 1,
  AITWIN_STATUS_INVALID_UTF8 = 2,
  AITWIN_STATUS_INVALID_ARGUMENT = 3,
  // Zero error variance with a non-zero effect.
  AITWIN_STATUS_DEGENERATE_DATA = 4,
  AITWIN_STATUS_PARSE_ERROR = 5,
  AITWIN_STATUS_SCHEMA_ERROR = 6,
  AITWIN_STATUS_NOT_FOUND = 7,
  AITWIN_STATUS_PANIC = 99,
} AitwinStatus;

typedef enum AitwinSpeaker {
  AITWIN_SPEAKER_USER = 0,
  AITWIN_SPEAKER_ASSISTANT = 1,
} AitwinSpeaker;

typedef enum AitwinTemplate {
  AITWIN_TEMPLATE_CHAT = 0,
  AITWIN_TEMPLATE_TASK_TRACKING = 1,
  AITWIN_TEMPLATE_REPHRASE = 2,
  AITWIN_TEMPLATE_EXPLICIT_FEEDBACK = 3,
} AitwinTemplate;

// Opaque dialogue under construction.
typedef struct AitwinDialogue AitwinDialogue;

typedef struct AitwinRmAnova {
  double f;
  double df1;
  double df2;
  double p;
  double partial_eta_sq;
} AitwinRmAnova;

typedef struct AitwinPairedT {
  double t;
  double df;
  // Two-tailed.
  double p;
  double d_z;
  double mean_diff;
} AitwinPairedT;

typedef struct AitwinMixedAnova {
  double interaction_f;
  double df1;
  double df2;
  double p;
} AitwinMixedAnova;

typedef struct AitwinScores {
  double emotional;
  double cognitive;
  double behavioral;
} AitwinScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *aitwin_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and must not be used afterwards.
void aitwin_string_free(char *s);

// Library version as a static string.
const char *aitwin_version(void);

// One-way repeated-measures ANOVA over a row-major
// `n_subjects x n_conditions` matrix.
//
// # Safety
// `values` must point to `n_subjects * n_conditions` doubles; `out` must be writable.
enum AitwinStatus aitwin_rm_anova(const double *values,
                                  size_t n_subjects,
                                  size_t n_conditions,
                                  struct AitwinRmAnova *out);

// Paired t-test of `a` against `b`, both of length `n`.
//
// # Safety
// `a` and `b` must each point to `n` doubles; `out` must be writable.
enum AitwinStatus aitwin_paired_t(const double *a,
                                  const double *b,
                                  size_t n,
                                  struct AitwinPairedT *out);

// Condition x group interaction of a mixed ANOVA. `groups[i]` is the
// between-subjects group of row `i`, numbered from 0.
//
// # Safety
// `values` must point to `n_subjects * n_conditions` doubles, `groups` to
// `n_subjects` integers; `out` must be writable.
enum AitwinStatus aitwin_mixed_anova(const double *values,
                                     const uint32_t *groups,
                                     size_t n_subjects,
                                     size_t n_conditions,
                                     struct AitwinMixedAnova *out);

// Two-tailed p for a t statistic.
//
// # Safety
// `out` must be writable.
enum AitwinStatus aitwin_tail_prob_t(double t, double df, double *out);

// Upper-tail p for an F statistic.
//
// # Safety
// `out` must be writable.
enum AitwinStatus aitwin_tail_prob_f(double f, double df1, double df2, double *out);

// Partial eta squared from an F ratio and its degrees of freedom.
double aitwin_eta_sq_from_f(double f, double df1, double df2);

// Full analysis report for a long-format study CSV, as text.
//
// # Safety
// `csv` must be a NUL-terminated string; `out` must be writable.
enum AitwinStatus aitwin_analyze_csv(const char *csv, char **out);

// Scores a 25-item response. `reverse_items` lists the 1-based items to
// reverse-code; pass NULL to use the default set, or a non-NULL pointer
// with `n_reverse == 0` for none.
//
// # Safety
// `answers` must point to `n_answers` integers, `reverse_items` (if not
// NULL) to `n_reverse` bytes; `out` must be writable.
enum AitwinStatus aitwin_score_survey(const int32_t *answers,
                                      size_t n_answers,
                                      const uint8_t *reverse_items,
                                      size_t n_reverse,
                                      struct AitwinScores *out);

// Maps a 1..6 Likert value `x` to `7 - x`.
//
// # Safety
// `out` must be writable.
enum AitwinStatus aitwin_reverse_code(int32_t value, uint8_t *out);

// Counterbalanced plan for one participant, as JSON.
//
// # Safety
// `participant_id` must be a NUL-terminated string; `out` must be writable.
enum AitwinStatus aitwin_make_plan_json(const char *participant_id, uint64_t seed, char **out);

// New empty dialogue. Release with [`aitwin_dialogue_free`].
struct AitwinDialogue *aitwin_dialogue_new(void);

// # Safety
// `dialogue` must come from [`aitwin_dialogue_new`] and not be used afterwards.
void aitwin_dialogue_free(struct AitwinDialogue *dialogue);

// Appends an entry.
//
// # Safety
// `dialogue` must be a live handle and `text` a NUL-terminated string.
enum AitwinStatus aitwin_dialogue_push(struct AitwinDialogue *dialogue,
                                       enum AitwinSpeaker speaker,
                                       const char *text);

// Number of entries, or 0 for NULL.
//
// # Safety
// `dialogue` must be NULL or a live handle.
size_t aitwin_dialogue_len(const struct AitwinDialogue *dialogue);

// The dialogue in prompt form, one `SPEAKER: text` line per entry.
//
// # Safety
// `dialogue` must be a live handle; `out` must be writable.
enum AitwinStatus aitwin_dialogue_serialize(const struct AitwinDialogue *dialogue, char **out);

// Renders a template over `dialogue`. Chat and task tracking need
// `scenario_id` (for example `"task-1"`); the other two ignore it.
//
// # Safety
// `dialogue` must be a live handle, `scenario_id` NULL or a NUL-terminated
// string; `out` must be writable.
enum AitwinStatus aitwin_render_prompt(enum AitwinTemplate template_,
                                       const char *scenario_id,
                                       const struct AitwinDialogue *dialogue,
                                       char **out);

// Hex SHA-256 of a template body.
//
// # Safety
// `out` must be writable.
enum AitwinStatus aitwin_template_digest(enum AitwinTemplate template_, char **out);

// Validates goal-tracking output and returns it normalized as
// `{"task_results": [...]}`, sorted by goal number. `strict` rejects
// markdown code fences around the object.
//
// # Safety
// `raw` must be a NUL-terminated string; `out` must be writable.
enum AitwinStatus aitwin_parse_task_results(const char *raw, bool strict, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AITWIN_H */

#ifndef MORPHCLASS_H
#define MORPHCLASS_H

/* Generated by cbindgen from the morphclass-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of an interface call. Non-zero values match the CLI exit codes
// for the same failure classes.
typedef enum MorphStatus {
  // The call succeeded.
  MORPH_STATUS_OK = 0,
  // A pointer argument was null or an argument was out of range.
  MORPH_STATUS_INVALID_ARGUMENT = 2,
  // An artifact could not be read, parsed, or cross-validated.
  MORPH_STATUS_DATA = 3,
  // Inference produced a non-finite value.
  MORPH_STATUS_NUMERIC = 4,
} MorphStatus;

// An opaque, immutable classifier handle. Safe to share across threads for
// reads; create and destroy it from one thread at a time.
typedef struct MorphClassifier MorphClassifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load a classifier from a model checkpoint, a BPE vocabulary, and a label
// space, storing the handle in `out`. On failure `out` is untouched and
// the status plus [`morph_last_error`] describe the problem.
//
// # Safety
// Path arguments must be valid NUL-terminated strings; `out` must be a
// valid pointer to a handle slot.
enum MorphStatus morph_classifier_open(const char *model_path,
                                       const char *bpe_path,
                                       const char *labels_path,
                                       struct MorphClassifier **out);

// Release a handle created by [`morph_classifier_open`]. Null is a no-op.
//
// # Safety
// `handle` must be null or a pointer returned by `morph_classifier_open`
// that has not been freed yet.
void morph_classifier_free(struct MorphClassifier *handle);

// Number of part-of-speech labels the classifier distinguishes; 0 if the
// handle is null.
//
// # Safety
// `handle` must be null or a live handle.
size_t morph_classifier_n_pos(const struct MorphClassifier *handle);

// Number of inflection-class labels across all parts of speech; 0 if the
// handle is null.
//
// # Safety
// `handle` must be null or a live handle.
size_t morph_classifier_n_contlex(const struct MorphClassifier *handle);

// Classify one lexeme from its lemma and `n_forms` inflected surface forms
// (pass `forms = NULL, n_forms = 0` for the bare lemma). On success writes
// two caller-owned strings: the part of speech and the inflection-class
// label. The inflection class is chosen among the classes belonging to the
// predicted part of speech.
//
// # Safety
// `handle` must be a live handle; `lemma` a valid string; `forms` either
// null (with `n_forms == 0`) or an array of `n_forms` valid strings;
// `pos_out` and `contlex_out` valid pointers.
enum MorphStatus morph_classifier_predict(const struct MorphClassifier *handle,
                                          const char *lemma,
                                          const char *const *forms,
                                          size_t n_forms,
                                          char **pos_out,
                                          char **contlex_out);

// Release a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must be null or a string pointer produced by this library that has
// not been freed yet.
void morph_string_free(char *s);

// Message describing the most recent failure on this thread. Never null;
// empty before any failure. The pointer stays valid until the next call
// into this library from the same thread.
const char *morph_last_error(void);

// Library version as a static string.
const char *morph_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MORPHCLASS_H */

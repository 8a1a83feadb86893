/* Minimal consumer of the C interface: load trained artifacts, classify
 * one lexeme given on the command line, print "POS<TAB>CONTLEX".
 *
 * Build (from the workspace root, after `cargo build -p morphclass-ffi`):
 *   gcc crates/ffi/examples/predict.c -Icrates/ffi/include \
 *       target/debug/libmorphclass_ffi.a -lpthread -ldl -lm -o predict
 *   ./predict run/model.ckpt run/vocab.bpe run/labels.json LEMMA [FORM...]
 */
#include <stdio.h>
#include <stdlib.h>

#include "morphclass.h"

int main(int argc, char **argv) {
    if (argc < 5) {
        fprintf(stderr, "usage: %s MODEL VOCAB LABELS LEMMA [FORM...]\n", argv[0]);
        return 2;
    }

    MorphClassifier *clf = NULL;
    MorphStatus st = morph_classifier_open(argv[1], argv[2], argv[3], &clf);
    if (st != MORPH_STATUS_OK) {
        fprintf(stderr, "open failed (%d): %s\n", (int)st, morph_last_error());
        return (int)st;
    }

    char *pos = NULL;
    char *contlex = NULL;
    st = morph_classifier_predict(clf, argv[4], (const char *const *)&argv[5],
                                  (size_t)(argc - 5), &pos, &contlex);
    if (st != MORPH_STATUS_OK) {
        fprintf(stderr, "predict failed (%d): %s\n", (int)st, morph_last_error());
        morph_classifier_free(clf);
        return (int)st;
    }

    printf("%s\t%s\n", pos, contlex);
    morph_string_free(pos);
    morph_string_free(contlex);
    morph_classifier_free(clf);
    return 0;
}

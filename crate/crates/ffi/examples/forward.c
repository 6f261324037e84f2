/* Runs one LDSA layer over a small input and prints the output shape.
 *
 *   cargo build -p ldsa-ffi --release
 *   cc -I crates/ffi/include crates/ffi/examples/forward.c \
 *      -L target/release -lldsa_ffi -lm -o forward
 *   LD_LIBRARY_PATH=target/release ./forward
 */
#include <stdio.h>
#include <math.h>
#include "ldsa.h"

#define T 12
#define D 8

static int check(enum LdsaStatus s, const char *what) {
    if (s != LDSA_STATUS_OK) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, ldsa_last_error_message());
        return 1;
    }
    return 0;
}

int main(void) {
    double x[T * D];
    for (int i = 0; i < T * D; i++) x[i] = sin(0.1 * i);

    LdsaMatrix *input = NULL, *y = NULL, *w = NULL;
    LdsaAttention *layer = NULL;
    if (check(ldsa_matrix_new(T, D, x, &input), "matrix_new")) return 1;
    if (check(ldsa_attention_new(LDSA_MECHANISM_LDSA, D, 2, 5, 0, 42, &layer), "attention_new")) return 1;
    if (check(ldsa_attention_forward(layer, input, &y, 0, &w), "forward")) return 1;

    printf("ldsa %s: y %zux%zu, weights %zux%zu\n", ldsa_version(),
           ldsa_matrix_rows(y), ldsa_matrix_cols(y), ldsa_matrix_rows(w), ldsa_matrix_cols(w));

    ldsa_matrix_free(w);
    ldsa_matrix_free(y);
    ldsa_matrix_free(input);
    ldsa_attention_free(layer);
    return 0;
}

/* C interface to the l1dfl loss and evaluation kernels.
 *
 * Arrays are contiguous doubles in x-fastest order: index = x + nx*(y + ny*z).
 * Every function returning l1dfl_status sets a thread-local message readable
 * through l1dfl_last_error() when it fails.
 */
#ifndef L1DFL_H
#define L1DFL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef int32_t l1dfl_status;

#define L1DFL_OK 0
#define L1DFL_NULL_POINTER 1
#define L1DFL_BAD_CONFIG 2
#define L1DFL_SHAPE_MISMATCH 3
#define L1DFL_INVALID_INPUT 4
#define L1DFL_INTERNAL 5

#define L1DFL_LOSS_DICE 0
#define L1DFL_LOSS_FOCAL 1
#define L1DFL_LOSS_DFL 2
#define L1DFL_LOSS_L1DFL 3

#define L1DFL_REDUCTION_MEAN 0
#define L1DFL_REDUCTION_SUM 1

typedef struct {
    double epsilon;
    double gamma;
    double alpha;
    double bin_width;
    int32_t focal_reduction;
} l1dfl_loss_config;

l1dfl_loss_config l1dfl_loss_config_default(void);

/* Writes the loss value and d(loss)/dp. grad_out holds as many elements as p.
 * config may be NULL for the defaults. */
l1dfl_status l1dfl_loss_forward_backward(int32_t loss_id,
                                         const double *p, const size_t p_dims[3],
                                         const double *g, const size_t g_dims[3],
                                         const l1dfl_loss_config *config,
                                         double *value_out, double *grad_out);

/* Writes a JSON report to *json_out; release it with l1dfl_string_free. */
l1dfl_status l1dfl_evaluate_case(const double *pred, const size_t pred_dims[3],
                                 const double *gt, const size_t gt_dims[3],
                                 const double *pet, const size_t pet_dims[3],
                                 const double spacing[3], char **json_out);

void l1dfl_string_free(char *s);
const char *l1dfl_last_error(void);
const char *l1dfl_version(void);

#ifdef __cplusplus
}
#endif

#endif

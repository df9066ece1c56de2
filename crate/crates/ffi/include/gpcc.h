/* C interface to the gpcc lossless point-cloud geometry codec.
 *
 * Every function returning int uses the GPCC_* codes below; on failure
 * gpcc_last_error() describes the most recent error on the calling thread.
 * Buffers and point arrays handed out by the library are released with the
 * matching gpcc_*_free function and nothing else.
 */

#ifndef GPCC_H
#define GPCC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define GPCC_OK 0
/* Null pointer or invalid argument value. */
#define GPCC_ERR_ARG 1
/* Malformed checkpoint, PLY, or configuration. */
#define GPCC_ERR_PARSE 2
/* Corrupt or truncated stream. */
#define GPCC_ERR_STREAM 3
/* Stream was produced by a different model (digest mismatch). */
#define GPCC_ERR_MODEL 4
#define GPCC_ERR_IO 5
/* Library bug: a panic was caught at the boundary. */
#define GPCC_ERR_INTERNAL 6

/* Bit-grouping flags for gpcc_model_create (match the stream header). */
#define GPCC_GROUPING_TWO_STAGE 0
#define GPCC_GROUPING_FOUR_STAGE 1
#define GPCC_GROUPING_FOUR_STAGE_NONUNIFORM 2

/* Opaque model handle. */
typedef struct GpccModel GpccModel;

/* Message for the most recent failure on this thread; valid until the next
 * failing call on the same thread. Never null. */
const char *gpcc_last_error(void);

/* Loads a .gpcm checkpoint. On success *out owns a new handle. */
int32_t gpcc_model_load(const char *path, GpccModel **out);

/* Creates a randomly initialized model. grouping is a GPCC_GROUPING_*
 * value; neighbor_prior and stage_refresh are 0/1. */
int32_t gpcc_model_create(size_t channels,
                          size_t kernel_size,
                          uint8_t grouping,
                          uint8_t neighbor_prior,
                          size_t conv_blocks_per_stage,
                          uint8_t stage_refresh,
                          uint64_t seed,
                          GpccModel **out);

int32_t gpcc_model_save(const GpccModel *model, const char *path);

/* FNV-1a 64 digest of the parameters; identifies the model in streams. */
int32_t gpcc_model_digest(const GpccModel *model, uint64_t *out);

void gpcc_model_free(GpccModel *model);

/* Compresses count points given as interleaved x,y,z doubles with voxel
 * size step. On success out_buf and out_len hold the stream; release with
 * gpcc_buffer_free(*out_buf, *out_len). */
int32_t gpcc_encode_points(const GpccModel *model,
                           const double *points,
                           size_t count,
                           double step,
                           uint8_t **out_buf,
                           size_t *out_len);

/* Decompresses a stream into voxel centers (interleaved x,y,z doubles).
 * Release with gpcc_points_free(*out_points, *out_count). */
int32_t gpcc_decode_points(const GpccModel *model,
                           const uint8_t *buf,
                           size_t len,
                           double **out_points,
                           size_t *out_count);

/* Encodes a .ply file to a stream file; out_bpp may be NULL. */
int32_t gpcc_encode_file(const GpccModel *model,
                         const char *input_ply,
                         const char *output_path,
                         double step,
                         double *out_bpp);

/* Decodes a stream file to a .ply of voxel centers (binary unless ascii
 * is nonzero). */
int32_t gpcc_decode_file(const GpccModel *model,
                         const char *input_path,
                         const char *output_ply,
                         uint8_t ascii);

void gpcc_buffer_free(uint8_t *buf, size_t len);

void gpcc_points_free(double *points, size_t count);

#ifdef __cplusplus
}
#endif

#endif /* GPCC_H */

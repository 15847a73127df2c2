#ifndef RIC_H
#define RIC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every entry point.
typedef enum RicStatus {
  RIC_STATUS_OK = 0,
  RIC_STATUS_NULL_POINTER = 1,
  RIC_STATUS_INVALID_ARGUMENT = 2,
  RIC_STATUS_SHAPE = 3,
  RIC_STATUS_IO = 4,
  RIC_STATUS_CHECKPOINT = 5,
  // Adversarial crafting did not reach the margin for this key and label.
  RIC_STATUS_CRAFT_FAILED = 6,
  RIC_STATUS_NON_FINITE = 7,
  RIC_STATUS_PANIC = 8,
} RicStatus;

// Opaque session handle.
typedef struct RicSession RicSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. Valid until the
// next failing call on the same thread; do not free.
const char *ric_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ric_version(void);

// Loads a classifier and a codec checkpoint. On success `*out` owns a
// session to be released with [`ric_session_free`].
//
// # Safety
// Both paths must be NUL-terminated strings; `out` must be writable.
enum RicStatus ric_session_open(const char *classifier_dir,
                                const char *codec_dir,
                                struct RicSession **out);

// Releases a session. Null is ignored.
//
// # Safety
// `s` must come from [`ric_session_open`] and not be used afterwards.
void ric_session_free(struct RicSession *s);

// Image shape expected by the session.
//
// # Safety
// All pointers must be valid.
enum RicStatus ric_input_shape(const struct RicSession *s,
                               size_t *channels,
                               size_t *height,
                               size_t *width);

// Encrypts `plain` under `key` into `out` (same length).
//
// # Safety
// `plain` must hold `len` readable bytes and `out` `out_len` writable bytes.
enum RicStatus ric_encrypt(const struct RicSession *s,
                           uint64_t key,
                           const uint8_t *plain,
                           size_t len,
                           uint8_t *out,
                           size_t out_len);

// Recovers a plaintext from ciphertext pixels. Raw buffers carry no
// metadata, so pairing the ciphertext with this session is the caller's job.
//
// # Safety
// As for [`ric_encrypt`].
enum RicStatus ric_decrypt(const struct RicSession *s,
                           uint64_t key,
                           const uint8_t *cipher,
                           size_t len,
                           uint8_t *out,
                           size_t out_len);

// Predicted label of an image, plaintext or ciphertext.
//
// # Safety
// `pixels` must hold `len` bytes; `label` must be writable.
enum RicStatus ric_classify(const struct RicSession *s,
                            const uint8_t *pixels,
                            size_t len,
                            uint32_t *label);

// PSNR in dB between two 8-bit buffers of equal length; identical inputs give +inf.
//
// # Safety
// `a` and `b` must hold `len` bytes; `out` must be writable.
enum RicStatus ric_psnr_u8(const uint8_t *a, const uint8_t *b, size_t len, double *out);

// `log10` of the brute-force success bound for tolerance `m` and `d` pixels.
// `power_of_ten` rounds the per-pixel base to a power of ten.
//
// # Safety
// `out` must be writable.
enum RicStatus ric_bound_log10(uint32_t m, uint64_t d, bool power_of_ten, double *out);

// Accuracy drop percentage from plaintext and ciphertext accuracies (percent).
//
// # Safety
// `out` must be writable.
enum RicStatus ric_adp(double acc_plain, double acc_encrypted, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RIC_H */

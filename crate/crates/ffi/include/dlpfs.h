#ifndef DLPFS_H
#define DLPFS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DlpfsStatus {
  DLPFS_STATUS_OK = 0,
  DLPFS_STATUS_NULL_ARGUMENT = 1,
  DLPFS_STATUS_INVALID_UTF8 = 2,
  DLPFS_STATUS_POLICY = 3,
  DLPFS_STATUS_IO = 4,
  DLPFS_STATUS_BAD_HANDLE = 5,
  DLPFS_STATUS_INVALID_CONFIG = 6,
  DLPFS_STATUS_UNSUPPORTED = 7,
  DLPFS_STATUS_PANIC = 8,
} DlpfsStatus;

typedef enum DlpfsFsType {
  DLPFS_FS_TYPE_LOOPBACK = 0,
  DLPFS_FS_TYPE_DLPFS = 1,
} DlpfsFsType;

// A parsed policy.
typedef struct DlpfsPolicy DlpfsPolicy;

// An in-process filesystem over a root directory.
typedef struct DlpfsVfs DlpfsVfs;

// One detected span. `capture_start == capture_end` when there is no
// capture group.
typedef struct DlpfsSpan {
  size_t start;
  size_t end;
  size_t rule_index;
  size_t pattern_index;
  size_t capture_start;
  size_t capture_end;
} DlpfsSpan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *dlpfs_last_error_message(void);

// errno equivalent of the last failed filesystem call on this thread, or 0.
int dlpfs_last_errno(void);

// Parse a JSON policy. Relative table paths resolve against the working
// directory.
//
// # Safety
// `data` must point to `len` readable bytes; `out` must be writable.
enum DlpfsStatus dlpfs_policy_parse(const uint8_t *data, size_t len, struct DlpfsPolicy **out);

// Load a policy file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DlpfsStatus dlpfs_policy_load(const char *path, struct DlpfsPolicy **out);

// # Safety
// `policy` must come from this library and not be used afterwards.
void dlpfs_policy_free(struct DlpfsPolicy *policy);

// Upper bound on the length of any match, 0 for NULL or empty policies.
//
// # Safety
// `policy` must be NULL or a live policy.
size_t dlpfs_policy_max_extent(const struct DlpfsPolicy *policy);

// # Safety
// `policy` must be NULL or a live policy.
size_t dlpfs_policy_rule_count(const struct DlpfsPolicy *policy);

// Find all spans in `data`. Release the array with [`dlpfs_spans_free`].
//
// # Safety
// `policy` must be live, `data` must point to `len` bytes, `out` and
// `out_len` must be writable.
enum DlpfsStatus dlpfs_scan(const struct DlpfsPolicy *policy,
                            const uint8_t *data,
                            size_t len,
                            struct DlpfsSpan **out,
                            size_t *out_len);

// # Safety
// `spans`/`len` must come from [`dlpfs_scan`].
void dlpfs_spans_free(struct DlpfsSpan *spans, size_t len);

// Apply the policy to a whole buffer. Release the result with
// [`dlpfs_buffer_free`].
//
// # Safety
// As for [`dlpfs_scan`].
enum DlpfsStatus dlpfs_scrub(const struct DlpfsPolicy *policy,
                             const uint8_t *data,
                             size_t len,
                             uint64_t seed,
                             uint8_t **out,
                             size_t *out_len);

// # Safety
// `data`/`len` must come from [`dlpfs_scrub`].
void dlpfs_buffer_free(uint8_t *data, size_t len);

// Create a filesystem over `root`. `fs_type` is a [`DlpfsFsType`] value.
// `policy` may be NULL for an empty policy
// and is copied. A negative `guard` selects the default; `seed` may be NULL
// for per-handle random seeds.
//
// # Safety
// `root` must be a NUL-terminated string, `policy` NULL or live, `seed`
// NULL or readable, `out` writable.
enum DlpfsStatus dlpfs_vfs_new(int fs_type,
                               const char *root,
                               const struct DlpfsPolicy *policy,
                               int64_t guard,
                               const uint64_t *seed,
                               struct DlpfsVfs **out);

// Settles every open handle and frees the filesystem.
//
// # Safety
// `vfs` must come from [`dlpfs_vfs_new`] and not be used afterwards.
void dlpfs_vfs_free(struct DlpfsVfs *vfs);

// Open `path` (relative to the root) with `open(2)` flags. With `O_CREAT`
// the file is created with `mode`.
//
// # Safety
// `vfs` must be live, `path` NUL-terminated, `fh` writable.
enum DlpfsStatus dlpfs_vfs_open(const struct DlpfsVfs *vfs,
                                const char *path,
                                int flags,
                                uint32_t mode,
                                uint64_t *fh);

// Read up to `cap` bytes at `offset`; `*nread` is 0 at end of file.
//
// # Safety
// `vfs` must be live, `buf` writable for `cap` bytes, `nread` writable.
enum DlpfsStatus dlpfs_vfs_read(const struct DlpfsVfs *vfs,
                                uint64_t fh,
                                uint64_t offset,
                                uint8_t *buf,
                                size_t cap,
                                size_t *nread);

// # Safety
// `vfs` must be live, `data` readable for `len` bytes, `written` writable.
enum DlpfsStatus dlpfs_vfs_write(const struct DlpfsVfs *vfs,
                                 uint64_t fh,
                                 uint64_t offset,
                                 const uint8_t *data,
                                 size_t len,
                                 size_t *written);

// Settle buffered writes of `fh`, reporting deferred write failures.
//
// # Safety
// `vfs` must be live.
enum DlpfsStatus dlpfs_vfs_flush(const struct DlpfsVfs *vfs, uint64_t fh);

// Settle and close `fh`.
//
// # Safety
// `vfs` must be live.
enum DlpfsStatus dlpfs_vfs_release(const struct DlpfsVfs *vfs, uint64_t fh);

// Current size of the open file.
//
// # Safety
// `vfs` must be live, `size` writable.
enum DlpfsStatus dlpfs_vfs_size(const struct DlpfsVfs *vfs, uint64_t fh, uint64_t *size);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLPFS_H */

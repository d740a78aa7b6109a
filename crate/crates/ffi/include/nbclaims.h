#ifndef NBCLAIMS_H
#define NBCLAIMS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum NbStatus {
  NB_STATUS_OK = 0,
  NB_STATUS_NULL_POINTER = 1,
  NB_STATUS_INVALID_UTF8 = 2,
  NB_STATUS_INVALID_INPUT = 3,
  NB_STATUS_GAZETTEER = 4,
  NB_STATUS_GEOMETRY = 5,
  NB_STATUS_RANK_DEFICIENT = 6,
  NB_STATUS_IO = 7,
  NB_STATUS_PANIC = 8,
} NbStatus;

/*
 Which listing field a claim came from.
 */
typedef enum NbField {
  NB_FIELD_NONE = 0,
  NB_FIELD_TITLE = 1,
  NB_FIELD_BODY = 2,
  NB_FIELD_NEIGHBORHOOD_FIELD = 3,
} NbField;

/*
 Named neighborhood polygons.
 */
typedef struct NbBoundarySet NbBoundarySet;

/*
 Compiled gazetteer plus spelling-normalization table.
 */
typedef struct NbLabeler NbLabeler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *nb_last_error_message(void);

/*
 Release a string returned by this library. Null is ignored.

 # Safety
 `s` is null or a pointer obtained from this library and not yet freed.
 */
void nb_string_free(char *s);

/*
 Build a labeler from gazetteer text (`canonical | alias | re:pattern`
 lines) and an optional `variant,canonical` CSV.

 # Safety
 `gazetteer` is a valid string, `normalization_csv` is null or a valid
 string, and `out` points to writable storage for one pointer.
 */
enum NbStatus nb_labeler_new(const char *gazetteer,
                             const char *normalization_csv,
                             struct NbLabeler **out);

/*
 Labeler over the shipped Chicago gazetteer and normalization table.

 # Safety
 `out` points to writable storage for one pointer.
 */
enum NbStatus nb_labeler_chicago(struct NbLabeler **out);

/*
 # Safety
 `labeler` is null or a handle from this library that has not been freed.
 */
void nb_labeler_free(struct NbLabeler *labeler);

/*
 Number of gazetteer entries, or 0 for a null handle.

 # Safety
 `labeler` is null or a live handle.
 */
size_t nb_labeler_len(const struct NbLabeler *labeler);

/*
 String-match claim for one listing. `*claim_out` receives the canonical
 name, or null when the listing is unknown. `field` may be null.

 # Safety
 `labeler` is a live handle, `title` and `body` are valid strings, `field`
 is null or a valid string, and both out pointers are writable.
 */
enum NbStatus nb_labeler_label(const struct NbLabeler *labeler,
                               const char *title,
                               const char *body,
                               const char *field,
                               char **claim_out,
                               enum NbField *source_out);

/*
 Canonical claim in a raw model response; `*claim_out` is null for unknown.

 # Safety
 `labeler` is a live handle, `raw` a valid string, `claim_out` writable.
 */
enum NbStatus nb_labeler_parse_response(const struct NbLabeler *labeler,
                                        const char *raw,
                                        char **claim_out);

/*
 Load neighborhood polygons from GeoJSON text. Names are read from the
 feature property `name_property`.

 # Safety
 Both strings are valid and `out` is writable.
 */
enum NbStatus nb_boundaries_from_geojson(const char *geojson,
                                         const char *name_property,
                                         struct NbBoundarySet **out);

/*
 # Safety
 `set` is null or a handle from this library that has not been freed.
 */
void nb_boundaries_free(struct NbBoundarySet *set);

/*
 Neighborhood containing the point; `*name_out` is null when none does.

 # Safety
 `set` is a live handle and `name_out` is writable.
 */
enum NbStatus nb_boundaries_assign(const struct NbBoundarySet *set,
                                   double lat,
                                   double lon,
                                   char **name_out);

/*
 Great-circle distance in kilometers.
 */
double nb_haversine_km(double lat1, double lon1, double lat2, double lon2);

/*
 Ordinary least squares on a row-major `n × p` design `x` (include a
 column of ones for an intercept). Each output array holds `p` values and
 may be null when not wanted.

 # Safety
 `x` points to `n * p` doubles, `y` to `n` doubles, and every non-null
 output to `p` writable doubles.
 */
enum NbStatus nb_ols_fit(const double *x,
                         size_t n,
                         size_t p,
                         const double *y,
                         double *coef_out,
                         double *se_out,
                         double *t_out,
                         double *p_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NBCLAIMS_H */

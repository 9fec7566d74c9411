/* End-to-end use of the C API: synth data, train from a config, evaluate,
 * save/load, predict, and error reporting. argv[1] is a scratch directory. */
#include <stdio.h>
#include <string.h>

#include "nial.h"

#define CHECK(call)                                                         \
  do {                                                                      \
    NialStatus st_ = (call);                                                \
    if (st_ != NIAL_STATUS_OK) {                                            \
      fprintf(stderr, "%s failed: %s (%s)\n", #call, nial_status_name(st_), \
              nial_last_error_message());                                   \
      return 1;                                                             \
    }                                                                       \
  } while (0)

int main(int argc, char **argv) {
  if (argc < 2) return 2;
  char conf[4096], ckpt[4096];
  snprintf(conf, sizeof conf, "%s/smoke.conf", argv[1]);
  snprintf(ckpt, sizeof ckpt, "%s/smoke.nial", argv[1]);

  FILE *f = fopen(conf, "w");
  if (!f) return 2;
  fputs("synth.classes = 2\nsynth.per_class = 16\nsynth.len = 32\n"
        "synth.noise = 0.05\nmodel.preset = tiny\ntrain.epochs = 2\n"
        "train.batch_size = 8\ntrain.lr = 0.003\ntrain.seed = 3\n", f);
  fclose(f);

  const char *overrides[] = {"train.epochs=3"};
  NialModel *model = NULL;
  NialTrainSummary summary;
  CHECK(nial_train_from_config(conf, overrides, 1, &model, &summary));
  if (summary.epochs_run != 3) return 3;
  if (nial_model_num_classes(model) != 2 || nial_model_num_outputs(model) != 1) return 4;

  NialDataset *ds = NULL;
  CHECK(nial_dataset_synth(2, 8, 32, 0.05, 11, &ds));
  CHECK(nial_dataset_preprocess(ds, true, false));
  NialEvalReport report;
  CHECK(nial_evaluate(model, ds, &report));
  if (report.n_samples != 16) return 5;

  CHECK(nial_model_save(model, ckpt));
  NialModel *loaded = NULL;
  CHECK(nial_model_load(ckpt, &loaded));
  NialEvalReport again;
  CHECK(nial_evaluate(loaded, ds, &again));
  if (again.loss != report.loss || again.accuracy != report.accuracy) return 6;

  double beats[2 * 32];
  for (size_t i = 0; i < 2 * 32; i++) beats[i] = (double)(i % 32) / 31.0;
  size_t labels[2];
  CHECK(nial_model_predict(loaded, beats, 2, 32, labels));
  if (labels[0] > 1 || labels[0] != labels[1]) return 7;

  NialModel *none = NULL;
  if (nial_model_load("/nonexistent/x.nial", &none) != NIAL_STATUS_IO) return 8;
  if (strncmp(nial_last_error_message(), "io: ", 4) != 0) return 9;

  nial_model_free(loaded);
  nial_model_free(model);
  nial_dataset_free(ds);
  printf("smoke ok (%s): accuracy %.3f\n", nial_version(), report.accuracy);
  return 0;
}

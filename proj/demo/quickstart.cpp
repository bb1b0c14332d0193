// Trains a small audio-visual model on synthetic clips for a few epochs and
// writes the prediction for one validation clip.
//
//   quickstart [out_dir]

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "avsal/avsal.hpp"

using namespace avsal;

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "quickstart_out";
  std::filesystem::create_directories(out);

  SyntheticConfig sc;
  sc.frames = 4;
  sc.height = 32;
  sc.width = 32;
  sc.fps = 8;

  ModelConfig mc = gcs::tiny_model_config(0);
  mc.fused_channels = 8;
  sc.sample_rate = mc.mel.sample_rate;

  const auto train_set = prepare_samples<double>(generate_synthetic(sc, 48, 1), sc, mc.mel);
  const auto val_set = prepare_samples<double>(generate_synthetic(sc, 4, 2), sc, mc.mel);

  SaliencyModel<double> model(mc);
  std::printf("%zu parameters\n", model.parameter_count());

  TrainConfig tc;
  tc.lr = 2e-3;
  tc.epochs = 8;
  tc.patience = 3;
  train(model, train_set, val_set, tc, [](const EpochRecord& r) {
    std::printf("epoch %zu  loss %.4f  val cc %.3f  auc_j %.3f\n", r.epoch, r.train_loss, r.val.cc, r.val.auc_judd);
  });

  const auto& s = val_set[0];
  const auto map = predict_map(model, s);
  const auto scores = metrics::evaluate(map, s.density, s.fixations);
  std::printf("clip 0: cc %.3f nss %.3f sim %.3f\n", scores.cc, scores.nss, scores.sim);

  write_image((out / "saliency.pgm").string(), saliency_to_gray(map, sc.height, sc.width));
  auto truth = s.density;
  const double peak = *std::max_element(truth.begin(), truth.end());
  for (auto& v : truth) v /= peak;
  write_image((out / "truth.pgm").string(), saliency_to_gray(truth, sc.height, sc.width));
  std::printf("wrote %s\n", (out / "saliency.pgm").string().c_str());
}

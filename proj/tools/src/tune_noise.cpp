// One-off oracle for the pinned synthetic run: for each candidate noise scale,
// generate the data set and report the All accuracy of the untrained head.
// The chosen value is recorded in configs/pinned_synthetic.conf.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "cms_app/pipeline.hpp"
#include "cms_app/settings.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Epoch-0 accuracy per synthetic noise scale", "cms_tune_noise"};
  std::string config;
  std::vector<double> noises;
  double lo = 0.60, hi = 0.85;
  app.add_option("--config", config, "base run config")->required();
  app.add_option("--noise", noises, "candidate noise scales")->required()->delimiter(',');
  app.add_option("--low", lo, "lower edge of the target window");
  app.add_option("--high", hi, "upper edge of the target window");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto file = cms::app::load_key_values(config);
    std::printf("noise,epoch0_all,epoch0_k,in_window\n");
    for (const double noise : noises) {
      auto settings = cms::app::resolve_settings(file, {{"noise-scale", std::to_string(noise)}});
      const auto ds = cms::generate_synthetic(settings.synthetic);
      const cms::ManifestView view(ds.manifest);
      const auto outcome = cms::app::untrained_inference({&ds.bank, &view}, settings);
      const auto report = cms::gcd_accuracy(outcome.clustering, ds.manifest);
      std::printf("%.4f,%.3f,%zu,%s\n", noise, report.all, outcome.k,
                  report.all >= lo && report.all <= hi ? "yes" : "no");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// Generates a small synthetic triplet set, trains the three encoders with
// the masked tensor loss and prints the zero-shot table.
//
//   ctp_quickstart [epochs] [loss]

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>

#include "ctp/ctp.hpp"

int main(int argc, char** argv) {
  const std::size_t epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 10;
  const std::string loss = argc > 2 ? argv[2] : "ctp_mask";

  ctp::SynthConfig data_cfg;
  const auto data = ctp::generate_synthetic(data_cfg);

  ctp::TrainConfig cfg;
  cfg.loss = loss;
  cfg.epochs = epochs;
  cfg.encoder.text_in = data_cfg.text_dim;
  cfg.encoder.image_in = data_cfg.image_dim;

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = ctp::train(cfg, data.train, [](const ctp::EpochLog& e) {
    std::cout << "epoch " << e.epoch << "  loss " << e.mean_loss << "  scale " << e.logit_scale
              << "  lr " << e.lr << '\n';
  });
  const auto t1 = std::chrono::steady_clock::now();
  std::cout << "trained in " << std::chrono::duration<double>(t1 - t0).count() << " s\n\n";

  const auto reports = ctp::evaluate(result.checkpoint, data.test, data.prototypes,
                                     {ctp::EvalMode::T_I, ctp::EvalMode::T_P, ctp::EvalMode::T_IP});
  std::cout << ctp::format_report_table(reports);
  return 0;
}

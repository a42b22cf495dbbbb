// Epoch training loop: shuffled batches, joint loss, Adam, per-epoch
// validation with early stopping, crash-safe checkpoints and JSONL logging.
#pragma once

#include <limits>
#include <string>
#include <vector>

#include "tasif/adam.hpp"
#include "tasif/data.hpp"
#include "tasif/losses.hpp"
#include "tasif/metrics.hpp"
#include "tasif/model.hpp"

namespace tasif {

struct TrainOptions {
  ModelConfig model;
  AdamConfig adam;
  LossConfig loss;
  i64 batch_size = 256;
  i64 eval_batch_size = 256;
  i64 epochs = 200;
  i64 patience = 10;  // epochs past the best validation ndcg@20; 0 disables
  double beta = 0.3;  // composite mix used for the validation metric
  std::vector<i64> cutoffs{10, 20};
  u64 seed = 42;
  std::string out_dir;
  bool resume = false;              // continue from last.ckpt + opt.state when present
  bool quiet = true;                // no per-epoch stderr line
  i64 inject_non_finite_step = -1;  // fault injection: poison this global step's loss
};

struct TrainResult {
  i64 epochs_run = 0;
  i64 best_epoch = -1;
  double best_ndcg20 = -1.0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  bool stopped_early = false;
  bool aborted = false;
  i64 abort_epoch = -1;
  i64 abort_step = -1;  // batch index within the aborting epoch
  std::string best_checkpoint, last_checkpoint, state_path, log_path, abort_path;
};

// Trains on split.train with validation on split.valid. Writes into
// opts.out_dir: train_log.jsonl (one JSON object per epoch; every field
// except wall_time is bit-reproducible for a fixed seed), best.ckpt,
// last.ckpt, opt.state, and abort.json if a non-finite loss stops the run.
TrainResult train_model(const InteractionDataset& ds, const SplitIndex& split,
                        const TrainOptions& opts);

}  // namespace tasif

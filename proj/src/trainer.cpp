#include "tasif/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace tasif {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr u64 kStateMagic = 0x5441534946535431ull;  // "TASIFST1"

void write_state(const std::string& path, i64 epochs_done, i64 best_epoch, double best_metric,
                 const Adam& opt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    TASIF_CHECK(os.good(), "cannot write '" << tmp << "'");
    const u64 head[3] = {kStateMagic, static_cast<u64>(epochs_done), static_cast<u64>(best_epoch)};
    os.write(reinterpret_cast<const char*>(head), sizeof(head));
    os.write(reinterpret_cast<const char*>(&best_metric), sizeof(best_metric));
    opt.serialize(os);
    TASIF_CHECK(os.good(), "write to '" << tmp << "' failed");
  }
  fs::rename(tmp, path);
}

void read_state(const std::string& path, i64& epochs_done, i64& best_epoch, double& best_metric,
                Adam& opt) {
  std::ifstream is(path, std::ios::binary);
  TASIF_CHECK(is.good(), "cannot open training state '" << path << "'");
  u64 head[3] = {0, 0, 0};
  is.read(reinterpret_cast<char*>(head), sizeof(head));
  TASIF_CHECK(is.good() && head[0] == kStateMagic, "'" << path << "' is not a training state file");
  epochs_done = static_cast<i64>(head[1]);
  best_epoch = static_cast<i64>(head[2]);
  is.read(reinterpret_cast<char*>(&best_metric), sizeof(best_metric));
  TASIF_CHECK(is.good(), "truncated training state '" << path << "'");
  opt.deserialize(is);
}

}  // namespace

TrainResult train_model(const InteractionDataset& ds, const SplitIndex& split,
                        const TrainOptions& opts) {
  opts.model.validate();
  TASIF_CHECK(!split.train.empty(), "training split is empty");
  TASIF_CHECK(!split.valid.empty(), "validation split is empty");
  TASIF_CHECK(opts.batch_size >= 1 && opts.epochs >= 1, "batch_size and epochs must be positive");
  TASIF_CHECK(!opts.out_dir.empty(), "an output directory is required");
  fs::create_directories(opts.out_dir);

  TrainResult res;
  res.best_checkpoint = opts.out_dir + "/best.ckpt";
  res.last_checkpoint = opts.out_dir + "/last.ckpt";
  res.state_path = opts.out_dir + "/opt.state";
  res.log_path = opts.out_dir + "/train_log.jsonl";
  res.abort_path = opts.out_dir + "/abort.json";

  const VocabInfo vocab = vocab_of(ds);
  const bool resuming = opts.resume && fs::exists(res.last_checkpoint);
  if (resuming)
    TASIF_CHECK(fs::exists(res.state_path),
                "cannot resume: '" << res.state_path << "' is missing");

  TasifModel model = resuming ? TasifModel(load_checkpoint(res.last_checkpoint))
                              : TasifModel(opts.model, vocab, opts.seed);
  require_same_setup(model.params(), opts.model, vocab);

  Adam opt(opts.adam);
  model.params().register_all(opt);

  i64 epochs_done = 0;
  i64 best_epoch = -1;
  double best_metric = -1.0;
  if (resuming) read_state(res.state_path, epochs_done, best_epoch, best_metric, opt);

  std::ofstream log(res.log_path, resuming ? std::ios::app : std::ios::trunc);
  TASIF_CHECK(log.good(), "cannot write '" << res.log_path << "'");

  // validation always scores ndcg@20 for the stopping rule
  EvalConfig vc;
  vc.beta = opts.beta;
  vc.cutoffs = opts.cutoffs;
  if (std::find(vc.cutoffs.begin(), vc.cutoffs.end(), i64{20}) == vc.cutoffs.end())
    vc.cutoffs.push_back(20);
  vc.batch_size = opts.eval_batch_size;
  vc.seed = opts.seed;

  res.best_epoch = best_epoch;
  res.best_ndcg20 = best_metric;
  res.epochs_run = epochs_done;

  for (i64 epoch = epochs_done + 1; epoch <= opts.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const u64 order_seed = mix_seed(opts.seed, static_cast<u64>(epoch), 0x0bdeu);
    BatchIterator it(ds, split.train, opts.model.n, opts.batch_size, order_seed, /*shuffle=*/true);

    const i64 types = vocab.attr_types();
    double sum_joint = 0.0, sum_rec_id = 0.0;
    std::vector<double> sum_rec_attr(static_cast<size_t>(types), 0.0);
    std::vector<double> sum_align(static_cast<size_t>(types), 0.0);
    std::vector<double> sum_i2a(static_cast<size_t>(types), 0.0);
    std::vector<double> last_weights(static_cast<size_t>(types), 0.0);
    i64 empty_rows = 0, zero_norms = 0, steps = 0;

    SequenceBatch batch;
    while (it.next(batch)) {
      Rng step_rng(mix_seed(opts.seed, static_cast<u64>(epoch), static_cast<u64>(steps)));
      LossBreakdown lb;
      {
        Tape tape;
        const ForwardOutput out = model.forward(batch, /*training=*/true, step_rng);
        lb = joint_loss(out, model.params(), batch, opts.loss);
        double jv = lb.joint.item();
        if (opt.step_count() == opts.inject_non_finite_step)
          jv = std::numeric_limits<double>::quiet_NaN();
        if (!std::isfinite(jv)) {
          json ab;
          ab["epoch"] = epoch;
          ab["batch_in_epoch"] = steps;
          ab["global_step"] = opt.step_count();
          ab["order_seed"] = order_seed;
          ab["loss"] = "non-finite";
          std::ofstream af(res.abort_path);
          af << ab.dump(2) << "\n";
          res.aborted = true;
          res.abort_epoch = epoch;
          res.abort_step = steps;
          return res;
        }
        tape.backward(lb.joint);
      }
      opt.step();
      opt.zero_grad_all();

      sum_joint += lb.joint.item();
      sum_rec_id += lb.rec_id.item();
      for (i64 j = 0; j < types; ++j) {
        sum_rec_attr[static_cast<size_t>(j)] += lb.rec_attr[static_cast<size_t>(j)].item();
        sum_align[static_cast<size_t>(j)] += lb.align[static_cast<size_t>(j)].item();
        sum_i2a[static_cast<size_t>(j)] += lb.i2a[static_cast<size_t>(j)].item();
        last_weights[static_cast<size_t>(j)] = lb.attr_weights[static_cast<size_t>(j)];
      }
      empty_rows += lb.empty_label_rows;
      zero_norms += lb.zero_norm_pairs;
      ++steps;
    }
    TASIF_CHECK(steps > 0, "training iterator produced no batches");

    const MetricsReport vr = evaluate(model, ds, split.valid, vc);
    const double vnd = vr.ndcg.at(20);
    const bool improved = vnd > best_metric;
    if (improved) {
      best_metric = vnd;
      best_epoch = epoch;
      save_checkpoint(res.best_checkpoint, model.params());
    }
    save_checkpoint(res.last_checkpoint, model.params());
    write_state(res.state_path, epoch, best_epoch, best_metric, opt);

    const double inv = 1.0 / static_cast<double>(steps);
    json rec;
    rec["epoch"] = epoch;
    rec["steps"] = steps;
    rec["train_loss"] = sum_joint * inv;
    rec["rec_id"] = sum_rec_id * inv;
    {
      json ra = json::array(), al = json::array(), ia = json::array(), aw = json::array();
      for (i64 j = 0; j < types; ++j) {
        ra.push_back(sum_rec_attr[static_cast<size_t>(j)] * inv);
        al.push_back(sum_align[static_cast<size_t>(j)] * inv);
        ia.push_back(sum_i2a[static_cast<size_t>(j)] * inv);
        aw.push_back(last_weights[static_cast<size_t>(j)]);
      }
      rec["rec_attr"] = ra;
      rec["align"] = al;
      rec["i2a"] = ia;
      rec["attr_weights"] = aw;
    }
    rec["empty_label_rows"] = empty_rows;
    rec["zero_norm_pairs"] = zero_norms;
    {
      json vrj, vnj;
      for (const auto& [k, v] : vr.recall) vrj[std::to_string(k)] = v;
      for (const auto& [k, v] : vr.ndcg) vnj[std::to_string(k)] = v;
      rec["valid_recall"] = vrj;
      rec["valid_ndcg"] = vnj;
    }
    rec["best_epoch"] = best_epoch;
    rec["wall_time"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    log << rec.dump() << "\n";
    log.flush();

    if (!opts.quiet)
      std::fprintf(stderr, "epoch %lld loss %.5f valid ndcg@20 %.5f best %lld\n",
                   static_cast<long long>(epoch), sum_joint * inv, vnd,
                   static_cast<long long>(best_epoch));

    res.epochs_run = epoch;
    res.best_epoch = best_epoch;
    res.best_ndcg20 = best_metric;
    res.final_train_loss = sum_joint * inv;

    if (opts.patience > 0 && best_epoch >= 0 && epoch - best_epoch >= opts.patience) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

}  // namespace tasif

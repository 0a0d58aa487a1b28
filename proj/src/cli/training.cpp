#include <atomic>
#include <cstdio>
#include <exception>
#include <thread>

#include "commands.hpp"
#include "retina/common/error.hpp"
#include "retina/nn/checkpoint.hpp"
#include "retina/train/crossval.hpp"

namespace retina::cli {
namespace {

// Keeps log lines in job order whatever the thread interleaving: a job's
// lines go straight out while it is the oldest unfinished job and are
// buffered otherwise.
class OrderedLog {
 public:
  OrderedLog(RunLog& log, std::size_t jobs) : log_(log), pending_(jobs), done_(jobs, false) {}

  void write(std::size_t job, ordered_json line) {
    std::lock_guard lock(mutex_);
    if (job == next_) {
      log_.write(line);
    } else {
      pending_[job].push_back(std::move(line));
    }
  }

  void finish(std::size_t job) {
    std::lock_guard lock(mutex_);
    done_[job] = true;
    while (next_ < done_.size() && done_[next_]) {
      ++next_;
      if (next_ < done_.size()) {
        for (const auto& line : pending_[next_]) log_.write(line);
        pending_[next_].clear();
      }
    }
  }

 private:
  RunLog& log_;
  std::mutex mutex_;
  std::vector<std::vector<ordered_json>> pending_;
  std::vector<bool> done_;
  std::size_t next_ = 0;
};

struct FoldData {
  Fold fold;
  ChannelStats stats;
  Dataset train;
  Dataset test;
  TrainConfig config;
};

struct Job {
  std::size_t fold = 0;
  std::size_t member = 0;
  TrainConfig config;
  fs::path dir;
  std::optional<nn::Classifier> classifier;
  bool complete = false;
};

class Runner {
 public:
  Runner(const TrainArgs& args, std::vector<FoldData>& folds, OrderedLog& log)
      : args_(args), folds_(folds), log_(log) {}

  void run(Job& job, std::size_t index) {
    const Dataset& data = folds_[job.fold].train;
    if (data.empty()) throw ConfigError("fold " + std::to_string(job.fold) + " has no gradable training sample");
    std::optional<nn::EncoderModel> encoder;
    if (job.config.transfer) {
      if (args_.pretrained) {
        const fs::path p = *args_.pretrained / relative(job) / "encoder.rtck";
        if (!fs::is_regular_file(p)) throw ConfigError("pretrained encoder missing: " + p.string());
        encoder = make_encoder(job.config);
        nn::load_state(*encoder, nn::load_checkpoint(p), "model");
      } else {
        encoder = make_encoder(job.config);
        Adam opt(job.config.adam);
        const bool finished = run_phase(job, index, "encoder", *encoder, opt, job.config.pretrain_epochs,
                                        [&](std::size_t e) { return pretrain_epoch(*encoder, opt, data, job.config, e); });
        if (!finished) return;
      }
    }
    if (args_.pretrain_only) {
      job.complete = true;
      return;
    }
    nn::Classifier clf = make_classifier(job.config);
    if (encoder) nn::transfer_encoder_weights(*encoder, clf);
    Nesterov opt(job.config.nesterov);
    const bool finished = run_phase(job, index, "classifier", clf, opt, job.config.finetune_epochs,
                                    [&](std::size_t e) { return finetune_epoch(clf, opt, data, job.config, e); });
    if (!finished) return;
    job.classifier = std::move(clf);
    job.complete = true;
  }

  bool halted() const { return halted_.load(); }

  static fs::path relative(const Job& job) {
    return fs::path("fold" + std::to_string(job.fold)) / ("member" + std::to_string(job.member));
  }

 private:
  // Runs or resumes one phase. Returns false when the halt budget ran out.
  template <typename Model, typename Optimizer, typename EpochFn>
  bool run_phase(const Job& job, std::size_t index, const std::string& phase, Model& model, Optimizer& opt,
                 std::size_t epochs, EpochFn&& epoch_fn) {
    const fs::path final_path = job.dir / (phase + ".rtck");
    const fs::path state_path = job.dir / (phase + ".state");
    if (args_.resume && fs::is_regular_file(final_path)) {
      nn::load_state(model, nn::load_checkpoint(final_path), "model");
      return true;
    }
    std::size_t start = 0;
    if (args_.resume && fs::is_regular_file(state_path)) {
      const nn::Checkpoint cp = nn::load_checkpoint(state_path);
      nn::load_state(model, cp, "model");
      opt.load(cp, "optimizer", model.parameters());
      start = ordered_json::parse(cp.meta).at("next_epoch").get<std::size_t>();
    }
    for (std::size_t e = start; e < epochs; ++e) {
      if (args_.halt_after && epochs_run_.fetch_add(1) >= *args_.halt_after) {
        halted_ = true;
        return false;
      }
      const EpochLog l = epoch_fn(e);
      log_.write(index, {{"fold", job.fold}, {"member", job.member}, {"phase", l.phase}, {"epoch", l.epoch},
                         {"steps", l.steps}, {"loss", l.loss}, {"reconstruction", l.reconstruction},
                         {"kl", l.kl}, {"classification", l.classification}, {"lr", l.lr},
                         {"grad_norm", l.grad_norm}});
      nn::Checkpoint state;
      nn::append_state(state, model, "model");
      opt.save(state, "optimizer");
      state.meta = ordered_json{{"phase", phase}, {"fold", job.fold}, {"member", job.member}, {"next_epoch", e + 1}}.dump();
      save_atomic(state_path, state);
    }
    nn::Checkpoint final_cp;
    nn::append_state(final_cp, model, "model");
    final_cp.meta = ordered_json{{"kind", phase},
                                 {"fold", job.fold},
                                 {"member", job.member},
                                 {"config", ordered_json::parse(train_config_to_json(job.config))},
                                 {"stats", stats_json(folds_[job.fold].stats)}}
                        .dump();
    save_atomic(final_path, final_cp);
    fs::remove(state_path);
    return true;
  }

  static void save_atomic(const fs::path& path, const nn::Checkpoint& cp) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    nn::save_checkpoint(tmp, cp);
    fs::rename(tmp, path);
  }

  const TrainArgs& args_;
  std::vector<FoldData>& folds_;
  OrderedLog& log_;
  std::atomic<std::size_t> epochs_run_{0};
  std::atomic<bool> halted_{false};
};

void run_jobs(std::vector<Job>& jobs, Runner& runner, OrderedLog& log) {
  const std::size_t workers = std::min(thread_cap(), jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto work = [&] {
    for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
      try {
        runner.run(jobs[j], j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
      log.finish(j);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream&) {
  const RunConfig& config = args.config;
  config.train.validate();
  const ManifestSource src = open_manifest(config);
  const FoldPlan plan = resolve_fold_plan(config, src.manifest);
  const std::string command = args.pretrain_only ? "pretrain" : "train";
  const ImageSource source = [&src](const Sample& s) { return src.load(s); };
  const std::size_t size = config.train.trunk.input_size;

  std::vector<FoldData> folds;
  ordered_json fold_stats = ordered_json::array();
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const FoldSplit split = split_fold(src.manifest, plan.folds[f]);
    FoldData d;
    d.fold = plan.folds[f];
    d.stats = dataset_stats(src.manifest, split.train, source, size);
    d.train = build_dataset(src.manifest, split.train, source, size, d.stats);
    d.test = build_dataset(src.manifest, split.test, source, size, d.stats);
    std::erase_if(d.test, [](const TrainSample& s) { return !s.grade; });
    if (d.test.empty() && !args.pretrain_only)
      throw ConfigError("fold " + std::to_string(f) + " has no gradable labeled test sample");
    d.config = config.train;
    d.config.seed = derive_seed(config.train.seed, "fold-" + std::to_string(f));
    fold_stats.push_back(stats_json(d.stats));
    folds.push_back(std::move(d));
  }

  ordered_json echo = run_config_json(config, command);
  echo["fold_stats"] = fold_stats;
  const std::string echo_text = echo.dump(2) + "\n";
  const fs::path echo_path = args.out / "config.json";
  if (args.resume && fs::is_regular_file(echo_path)) {
    if (read_text(echo_path) != echo_text) throw ConfigError("--resume: configuration differs from the existing run");
  } else {
    write_text(echo_path, echo_text);
  }
  write_text(args.out / "folds.json", fold_plan_to_json(plan));

  RunLog run_log(args.out / "log.jsonl", args.resume, command);
  std::vector<Job> jobs;
  for (std::size_t f = 0; f < folds.size(); ++f)
    for (std::size_t m = 0; m < config.train.ensemble_size; ++m) {
      Job j;
      j.fold = f;
      j.member = m;
      j.config = member_config(folds[f].config, m);
      j.dir = args.out / "checkpoints" / Runner::relative(j);
      jobs.push_back(std::move(j));
    }
  OrderedLog log(run_log, jobs.size());
  Runner runner(args, folds, log);
  run_jobs(jobs, runner, log);

  if (runner.halted()) {
    run_log.write({{"event", "halted"}});
    out << "halted after " << *args.halt_after << " epochs; rerun with --resume to continue\n";
    return kExitOk;
  }
  if (args.pretrain_only) {
    run_log.write({{"event", "done"}, {"encoders", jobs.size()}});
    out << "pretrained " << jobs.size() << " encoders\n";
    return kExitOk;
  }

  // Ensemble predictions per fold; member order and seeds match crossval_run.
  ordered_json ensemble{{"folds", ordered_json::array()}};
  ordered_json cv_folds = ordered_json::array();
  std::vector<FoldResult> results;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<nn::Classifier*> members;
    ordered_json entry{{"fold", f},
                       {"test_centers", folds[f].fold.test_centers},
                       {"stats", stats_json(folds[f].stats)},
                       {"members", ordered_json::array()}};
    for (auto& j : jobs) {
      if (j.fold != f) continue;
      members.push_back(&*j.classifier);
      entry["members"].push_back({{"checkpoint", (Runner::relative(j) / "classifier.rtck").generic_string()},
                                  {"config", ordered_json::parse(train_config_to_json(j.config))}});
    }
    ensemble["folds"].push_back(entry);

    const Dataset& test = folds[f].test;
    std::vector<std::size_t> all(test.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto predicted = grades_from_probabilities(ensemble_predict(members, make_batch(test, all).images));
    FoldResult r;
    r.fold = f;
    r.test_centers = folds[f].fold.test_centers;
    r.stats = folds[f].stats;
    for (std::size_t i = 0; i < test.size(); ++i)
      r.predictions.push_back({src.manifest.samples[test[i].key].patient_id, *test[i].grade, predicted[i]});
    EvaluationOptions fold_eval = config.evaluation;
    fold_eval.seed = derive_seed(config.evaluation.seed, "fold-" + std::to_string(f));
    const auto pairs = patient_pairs(r.predictions);
    r.metrics = evaluate_pairs(pairs, fold_eval);
    const fs::path dir = args.out / "reports" / ("fold" + std::to_string(f));
    write_text(dir / "predictions.csv", serialize_predictions(r.predictions));
    write_text(dir / "report.json", report_to_json(render_report(r.metrics)));
    write_text(dir / "report.txt", report_to_text(render_report(r.metrics)));
    cv_folds.push_back({{"fold", f}, {"test_centers", r.test_centers}, {"patients", pairs.size()}});
    results.push_back(std::move(r));
  }
  ordered_json summary = ordered_json::array();
  for (const auto& s : summarize_folds(results))
    summary.push_back({{"metric", s.metric}, {"mean", s.mean}, {"sd", s.sd}, {"folds", s.folds}});
  write_text(args.out / "checkpoints" / "ensemble.json", ensemble.dump(2) + "\n");
  write_text(args.out / "reports" / "crossval.json",
             ordered_json{{"folds", cv_folds}, {"summary", summary}}.dump(2) + "\n");
  run_log.write({{"event", "done"}, {"folds", folds.size()}, {"members", config.train.ensemble_size}});
  out << "trained " << folds.size() << " folds x " << config.train.ensemble_size << " members\n";
  for (const auto& s : summarize_folds(results)) {
    char line[128];
    std::snprintf(line, sizeof line, "  %-22s %6.1f%% +/- %5.1f\n", s.metric.c_str(), round_pct(s.mean),
                  round_pct(s.sd));
    out << line;
  }
  return kExitOk;
}

}  // namespace retina::cli

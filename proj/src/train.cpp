#include "groupdiff/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "groupdiff/autograd.hpp"
#include "groupdiff/csv.hpp"
#include "groupdiff/diffusion.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/optim.hpp"

namespace groupdiff {

namespace {

// Everything one forward pass needs, for groups that share a size.
struct PassBatch {
  std::size_t group_size = 1;
  std::vector<std::size_t> positions;
  std::vector<int> labels;
  std::vector<int> timesteps;
  std::vector<double> noise;

  std::size_t groups() const { return positions.size() / group_size; }
};

struct IterationBatch {
  PassBatch grouped;
  PassBatch single;
};

class BatchSampler {
 public:
  BatchSampler(const RunConfig& cfg, const Dataset& data, const DatasetIndex& index)
      : cfg_(cfg),
        data_(data),
        index_(index),
        schedule_(cfg.schedule.build()),
        anchor_rng_(derive_seed(cfg.seed, 0x71)),
        drop_rng_(derive_seed(cfg.seed, 0x72)),
        group_rng_(derive_seed(cfg.seed, 0x73, cfg.group.seed)),
        noise_rng_(derive_seed(cfg.seed, 0x74)) {
    position_of_id_.reserve(data.images.size());
    for (std::size_t i = 0; i < data.images.size(); ++i) position_of_id_[data.images[i].id] = i;
  }

  const NoiseSchedule& schedule() const { return schedule_; }

  IterationBatch next() {
    IterationBatch b;
    const std::size_t n = cfg_.group.group_size;
    b.grouped.group_size = n;
    const int null_label = cfg_.model.null_class();
    const std::size_t pixels = cfg_.model.image_size * cfg_.model.image_size * cfg_.model.channels;
    for (std::size_t g = 0; g < cfg_.train.batch_groups; ++g) {
      const auto anchor = static_cast<std::size_t>(uniform_int(anchor_rng_, 0, static_cast<std::int64_t>(data_.images.size()) - 1));
      const bool dropped = bernoulli(drop_rng_, cfg_.noise.label_dropout);
      const bool grouped = n > 1 && (cfg_.mode == SamplerMode::kGroupDiffF ||
                                     (cfg_.mode == SamplerMode::kGroupDiffL && dropped));
      std::vector<std::size_t> members{anchor};
      if (grouped) {
        const auto group = assemble_group(data_.images[anchor].id, cfg_.group, index_, group_rng_);
        members.clear();
        for (auto id : group.ids) members.push_back(position_of_id_.at(id));
      }
      PassBatch& pass = grouped ? b.grouped : b.single;
      const auto ts = sample_group_timesteps(members.size(), cfg_.noise, schedule_, noise_rng_);
      for (std::size_t m = 0; m < members.size(); ++m) {
        pass.positions.push_back(members[m]);
        pass.labels.push_back(dropped ? null_label : data_.images[members[m]].class_id);
        pass.timesteps.push_back(ts[m]);
      }
      const Tensor eps = randn(Shape{members.size() * pixels}, noise_rng_);
      pass.noise.insert(pass.noise.end(), eps.storage().begin(), eps.storage().end());
    }
    return b;
  }

 private:
  const RunConfig& cfg_;
  const Dataset& data_;
  const DatasetIndex& index_;
  NoiseSchedule schedule_;
  Rng anchor_rng_, drop_rng_, group_rng_, noise_rng_;
  std::unordered_map<std::uint64_t, std::size_t> position_of_id_;
};

ag::Var pass_loss(const Denoiser& model, std::span<const ag::Var> params, const PassBatch& pass,
                  const Dataset& data, const NoiseSchedule& schedule) {
  const auto& mc = model.config();
  const Shape img{pass.positions.size(), mc.image_size, mc.image_size, mc.channels};
  const Tensor x0 = to_model_space(stack_pixels(data, pass.positions));
  const Tensor eps(img, pass.noise);
  const Tensor xt = forward_noising(x0, pass.timesteps, eps, schedule);
  ForwardOptions fo;
  fo.group_size = pass.group_size;
  fo.group_on = pass.group_size > 1;
  const ag::Var pred = model.forward_graph(params, xt, pass.timesteps, pass.labels, fo);
  return ag::group_mse(pred, patchify(eps, mc.patch));
}

}  // namespace

DatasetIndex load_or_build_index(const RunConfig& config, const Dataset& dataset) {
  DatasetIndex index = config.paths.index.empty() ? build_index(dataset, config.group.tau)
                                                  : read_index(config.paths.index);
  for (const auto& img : dataset.images) {
    if (!index.contains(img.id)) throw ValidationError("index does not cover dataset image " + std::to_string(img.id));
  }
  return index;
}

TrainResult train(const RunConfig& config, const Dataset& dataset, const DatasetIndex& index,
                  const TrainOptions& options) {
  config.validate();
  if (dataset.images.empty()) throw ValidationError("train: empty dataset");
  if (dataset.image_size != config.model.image_size || dataset.channels != config.model.channels) {
    throw ValidationError("train: dataset image shape does not match the model");
  }
  TrainResult result{Denoiser(config.model, derive_seed(config.seed, 0x70)), {}, 0, 0};
  Denoiser& model = result.model;
  BatchSampler sampler(config, dataset, index);
  AdamW opt(config.train.optimizer);
  const double base_lr = config.train.optimizer.lr;

  IterationBatch fixed;
  if (options.fixed_batch && config.train.iterations > 0) fixed = sampler.next();

  for (std::size_t it = 0; it < config.train.iterations; ++it) {
    const IterationBatch batch = options.fixed_batch ? fixed : sampler.next();
    const double lr = config.train.warmup == 0
                          ? base_lr
                          : base_lr * std::min(1.0, static_cast<double>(it + 1) / static_cast<double>(config.train.warmup));
    opt.set_lr(lr);

    std::vector<ag::Var> params;
    params.reserve(model.parameters().size());
    for (const auto& p : model.parameters()) params.push_back(ag::parameter(p.value));

    const std::size_t groups = batch.grouped.groups() + batch.single.groups();
    ag::Var total;
    for (const PassBatch* pass : {&batch.grouped, &batch.single}) {
      if (pass->positions.empty()) continue;
      const ag::Var l = pass_loss(model, params, *pass, dataset, sampler.schedule());
      total = total.defined() ? ag::add(total, l) : l;
    }
    result.grouped_groups += batch.grouped.groups();
    result.single_groups += batch.single.groups();
    const ag::Var loss = ag::scale(total, 1.0 / static_cast<double>(groups));
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + " (non-finite loss)");
    }
    loss.backward();

    std::vector<Tensor> values, grads;
    values.reserve(params.size());
    grads.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      values.push_back(std::move(model.parameters()[i].value));
      grads.push_back(params[i].grad());
    }
    params.clear();
    opt.step(values, grads);
    for (std::size_t i = 0; i < values.size(); ++i) model.parameters()[i].value = std::move(values[i]);

    const TrainLogRow row{it, value, lr};
    if (it % config.train.log_every == 0 || it + 1 == config.train.iterations) {
      result.log.push_back(row);
      if (options.on_log) options.on_log(row);
    }
    if (!options.checkpoint_dir.empty() && config.train.checkpoint_every > 0 &&
        (it + 1) % config.train.checkpoint_every == 0) {
      model.save((std::filesystem::path(options.checkpoint_dir) / ("ckpt_" + std::to_string(it + 1) + ".gdf")).string());
    }
  }
  return result;
}

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log) {
  CsvTable table({"iter", "loss", "lr"});
  for (const auto& r : log) table.add_row({std::to_string(r.iter), format_double(r.loss), format_double(r.lr)});
  table.write(path);
}

TrainResult train_run(const RunConfig& config) {
  config.validate();
  config.validate_paths();
  const Dataset dataset = read_dataset(config.paths.dataset);
  const DatasetIndex index = load_or_build_index(config, dataset);
  const std::filesystem::path out(config.paths.output_dir);
  std::filesystem::create_directories(out);
  save_run_config((out / "config.json").string(), config);
  TrainOptions options;
  options.checkpoint_dir = out.string();
  TrainResult result = train(config, dataset, index, options);
  write_train_log((out / "train_log.csv").string(), result.log);
  result.model.save((out / "model.gdf").string());
  return result;
}

}  // namespace groupdiff

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "groupdiff/attn_metrics.hpp"
#include "groupdiff/denoiser.hpp"
#include "groupdiff/diffusion.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/eval.hpp"
#include "groupdiff/grouping.hpp"
#include "groupdiff/run_config.hpp"
#include "groupdiff/sampler.hpp"
#include "groupdiff/toy_data.hpp"
#include "groupdiff/train.hpp"

namespace py = pybind11;
using namespace groupdiff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

Array blocks_array(const AttentionBlockSums& b) {
  Array out({static_cast<py::ssize_t>(b.n), static_cast<py::ssize_t>(b.n)});
  std::copy(b.mass.begin(), b.mass.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_groupdiff, m) {
  m.doc() = "Group diffusion core: group attention, denoiser, sampler and metrics";
  m.attr("__version__") = "0.1.0";

  static py::exception<Error> base_error(m, "Error");
  static py::exception<ValidationError> validation_error(m, "ValidationError", base_error.ptr());
  static py::exception<NumericError> numeric_error(m, "NumericError", base_error.ptr());
  static py::exception<DimensionError> dimension_error(m, "DimensionError", base_error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      py::set_error(validation_error, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric_error, e.what());
    } catch (const DimensionError& e) {
      py::set_error(dimension_error, e.what());
    } catch (const Error& e) {
      py::set_error(base_error, e.what());
    }
  });

  // tensor core
  m.def(
      "scaled_dot_attention",
      [](const Array& q, const Array& k, const Array& v) {
        Tensor w;
        const Tensor o = scaled_dot_attention(to_tensor(q), to_tensor(k), to_tensor(v), &w);
        return py::make_tuple(to_array(o), to_array(w));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), "Single-head attention; returns (output, weights).");

  m.def(
      "group_attention",
      [](const Array& q, const Array& k, const Array& v, std::size_t heads, std::size_t group_size, bool group_on) {
        std::vector<AttentionBlockSums> capture;
        const Tensor o = group_attention(to_tensor(q), to_tensor(k), to_tensor(v), {heads, group_size, group_on}, &capture);
        py::list blocks;
        for (const auto& b : capture) blocks.append(blocks_array(b));
        return py::make_tuple(to_array(o), blocks);
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("heads") = 1, py::arg("group_size") = 1,
      py::arg("group_on") = true, "Multi-head attention over [B, L, C] with B split into groups; returns (out, block sums).");

  // toy data
  py::class_<Dataset>(m, "Dataset")
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_readonly("seed", &Dataset::seed)
      .def_readonly("image_size", &Dataset::image_size)
      .def("__len__", [](const Dataset& d) { return d.images.size(); })
      .def_property_readonly("labels",
                             [](const Dataset& d) {
                               std::vector<int> l;
                               for (const auto& i : d.images) l.push_back(i.class_id);
                               return l;
                             })
      .def_property_readonly("ids",
                             [](const Dataset& d) {
                               std::vector<std::uint64_t> l;
                               for (const auto& i : d.images) l.push_back(i.id);
                               return l;
                             })
      .def("pixels", [](const Dataset& d) {
        std::vector<std::size_t> pos(d.images.size());
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
        return to_array(stack_pixels(d, pos));
      });

  m.def(
      "generate_dataset",
      [](int num_classes, int images_per_class, int image_size, std::uint64_t seed, double spread, int group_max) {
        DatasetSpec s;
        s.num_classes = num_classes;
        s.images_per_class = images_per_class;
        s.image_size = image_size;
        s.seed = seed;
        s.within_class_spread = spread;
        s.group_size_max = group_max;
        return generate_dataset(s);
      },
      py::arg("num_classes") = 8, py::arg("images_per_class") = 64, py::arg("image_size") = 16, py::arg("seed") = 0,
      py::arg("spread") = 0.5, py::arg("group_size_max") = 4);
  m.def("read_dataset", &read_dataset, py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("dataset"));
  m.def("encode", [](const Array& px) { return encode(to_tensor(px)); }, py::arg("pixels"));
  m.def("cosine", [](const std::vector<double>& a, const std::vector<double>& b) { return cosine(a, b); });

  // grouping
  py::class_<DatasetIndex>(m, "DatasetIndex")
      .def_property_readonly("size", &DatasetIndex::size)
      .def_property_readonly("feature_dim", &DatasetIndex::feature_dim)
      .def_property_readonly("tau", &DatasetIndex::tau);
  m.def("build_index", [](const Dataset& d, double tau) { return build_index(d, tau); }, py::arg("dataset"),
        py::arg("tau") = kDefaultSimilarityThreshold);
  m.def("query", py::overload_cast<std::uint64_t, const DatasetIndex&, double>(&query), py::arg("anchor_id"),
        py::arg("index"), py::arg("tau"));
  m.def(
      "assemble_group",
      [](std::uint64_t anchor, const DatasetIndex& index, std::size_t group_size, const std::string& mode, double tau,
         std::uint64_t seed) {
        const auto g = assemble_group(anchor, GroupSpec{group_size, parse_query_mode(mode), tau, seed}, index);
        return py::make_tuple(g.ids, to_string(g.mode_used), g.padded_with_replacement);
      },
      py::arg("anchor_id"), py::arg("index"), py::arg("group_size"), py::arg("mode") = "similarity",
      py::arg("tau") = kDefaultSimilarityThreshold, py::arg("seed") = 0,
      "Returns (ids, mode_used, padded_with_replacement).");

  // diffusion
  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_static("scaled_linear", &NoiseSchedule::scaled_linear, py::arg("steps"))
      .def_static("linear", &NoiseSchedule::linear, py::arg("steps"), py::arg("beta_start"), py::arg("beta_end"))
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def_readonly("betas", &NoiseSchedule::betas)
      .def_readonly("alpha_bars", &NoiseSchedule::alpha_bars);
  m.def(
      "forward_noising",
      [](const Array& x0, const std::vector<int>& t, const Array& eps, const NoiseSchedule& s) {
        return to_array(forward_noising(to_tensor(x0), t, to_tensor(eps), s));
      },
      py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("schedule"));
  m.def(
      "sample_group_timesteps",
      [](std::size_t n, std::size_t sigma, const NoiseSchedule& s, std::uint64_t seed) {
        Rng rng(seed);
        return sample_group_timesteps(n, GroupNoisePolicy{sigma, 0.0}, s, rng);
      },
      py::arg("n"), py::arg("max_deviation"), py::arg("schedule"), py::arg("seed"));
  m.def("group_loss", [](const Array& p, const Array& t) { return group_loss(to_tensor(p), to_tensor(t)); });
  m.def("cfg_combine", [](const Array& c, const Array& u, double s) {
    return to_array(cfg_combine(to_tensor(c), to_tensor(u), s));
  });

  // denoiser
  py::class_<Denoiser>(m, "Denoiser")
      .def(py::init([](std::size_t depth, std::size_t hidden, std::size_t heads, std::size_t num_classes,
                       std::size_t image_size, std::size_t patch, std::size_t max_group, std::uint64_t seed) {
             ModelConfig c;
             c.depth = depth;
             c.hidden = hidden;
             c.heads = heads;
             c.num_classes = num_classes;
             c.image_size = image_size;
             c.patch = patch;
             c.max_group = max_group;
             c.time_embed_dim = hidden;
             return Denoiser(c, seed);
           }),
           py::arg("depth") = 4, py::arg("hidden") = 64, py::arg("heads") = 4, py::arg("num_classes") = 8,
           py::arg("image_size") = 16, py::arg("patch") = 4, py::arg("max_group") = 16, py::arg("seed") = 0)
      .def_static("load", &Denoiser::load, py::arg("path"))
      .def("save", &Denoiser::save, py::arg("path"))
      .def_property_readonly("parameter_count", &Denoiser::parameter_count)
      .def_property_readonly("config_json", [](const Denoiser& d) { return model_config_to_json(d.config()); })
      .def(
          "forward",
          [](const Denoiser& d, const Array& x, const std::vector<int>& t, const std::vector<int>& labels,
             std::size_t group_size, bool group_on) {
            ForwardOptions fo;
            fo.group_size = group_size;
            fo.group_on = group_on;
            return to_array(d.forward(to_tensor(x), t, labels, fo).eps);
          },
          py::arg("x_t"), py::arg("timesteps"), py::arg("labels"), py::arg("group_size") = 1,
          py::arg("group_on") = false, "Predicted noise in image layout [B, H, W, 3].");

  // sampler
  m.def(
      "generate",
      [](const Denoiser& d, const NoiseSchedule& s, const std::string& mode, std::size_t steps, double cfg,
         std::size_t group_size, std::size_t num_groups, int class_label, std::uint64_t seed,
         std::pair<double, double> guidance, std::pair<double, double> group_window, bool capture) {
        SamplerPlan p;
        p.mode = parse_sampler_mode(mode);
        p.steps = steps;
        p.cfg_scale = cfg;
        p.group_size = group_size;
        p.num_groups = num_groups;
        p.class_label = class_label;
        p.seed = seed;
        p.guidance = {guidance.first, guidance.second};
        p.group_window = {group_window.first, group_window.second};
        p.capture_attention = capture;
        const SampleTrace tr = generate(p, d, s);
        py::list records;
        for (const auto& r : tr.attention) {
          py::dict rec;
          rec["step"] = r.step;
          rec["layer"] = r.layer;
          rec["group"] = r.group;
          rec["mass"] = blocks_array(r);
          records.append(rec);
        }
        return py::make_tuple(to_array(tr.images), records);
      },
      py::arg("denoiser"), py::arg("schedule"), py::arg("mode") = "groupdiff_l", py::arg("steps") = 50,
      py::arg("cfg") = 1.5, py::arg("group_size") = 4, py::arg("num_groups") = 1, py::arg("class_label") = 0,
      py::arg("seed") = 0, py::arg("guidance") = std::pair<double, double>{0.0, 1.0},
      py::arg("group_window") = std::pair<double, double>{0.0, 1.0}, py::arg("capture") = false,
      "Returns (images in model space, attention records).");

  // attention metrics
  m.def(
      "block_sums",
      [](const Array& weights, std::size_t n, std::size_t tokens, std::size_t heads) {
        return blocks_array(block_sums({weights.data(), static_cast<std::size_t>(weights.size())}, n, tokens, heads));
      },
      py::arg("weights"), py::arg("n"), py::arg("tokens"), py::arg("heads") = 1);
  m.def(
      "cross_sample_score",
      [](const std::vector<double>& p) { return cross_sample_score(p); }, py::arg("p_cross"),
      "(max − mean) / max of one image's cross masses; None for fewer than two.");
  m.def(
      "aggregate_s_cross",
      [](const std::vector<Array>& blocks) {
        std::vector<AttentionBlockSums> recs;
        for (const auto& b : blocks) {
          AttentionBlockSums r;
          r.n = static_cast<std::size_t>(b.shape(0));
          r.mass.assign(b.data(), b.data() + b.size());
          recs.push_back(std::move(r));
        }
        return aggregate_s_cross(recs);
      },
      py::arg("blocks"));
  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); });
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); });

  // eval
  m.def(
      "frechet_distance",
      [](const std::vector<double>& mu_a, const Array& cov_a, const std::vector<double>& mu_b, const Array& cov_b) {
        FeatureGaussian a{mu_a, std::vector<double>(cov_a.data(), cov_a.data() + cov_a.size()), 0};
        FeatureGaussian b{mu_b, std::vector<double>(cov_b.data(), cov_b.data() + cov_b.size()), 0};
        return frechet_distance(a, b);
      },
      py::arg("mu_a"), py::arg("cov_a"), py::arg("mu_b"), py::arg("cov_b"));
  m.def("fid_proxy", [](const Array& gen, const Array& ref) { return fid_proxy(to_tensor(gen), to_tensor(ref)); },
        py::arg("generated_pixels"), py::arg("reference_pixels"));

  // run configs
  m.def("default_run_config", [] { return serialize(RunConfig{}); }, "Default run config as JSON text.");
  m.def("normalize_run_config", [](const std::string& text) { return serialize(parse_run_config(text)); },
        py::arg("text"), "Parses, validates and re-serializes a run config.");
  m.def(
      "train",
      [](const std::string& config_text) {
        const auto r = train_run(parse_run_config(config_text));
        std::vector<std::pair<std::size_t, double>> log;
        for (const auto& row : r.log) log.emplace_back(row.iter, row.loss);
        return log;
      },
      py::arg("config_json"), "Trains from a run config (JSON text); returns [(iter, loss)].");
}

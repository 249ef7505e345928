#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "geotdm/checkpoint.hpp"
#include "geotdm/diffusion.hpp"
#include "geotdm/eval.hpp"
#include "geotdm/gtrj.hpp"
#include "geotdm/sim.hpp"

namespace py = pybind11;
using namespace geotdm;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

TensorD tensor_from(const DArray& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  TensorD t(shape);
  std::copy_n(a.data(), t.numel(), t.data());
  return t;
}

py::array_t<double> array_from(const TensorD& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy_n(t.data(), t.numel(), a.mutable_data());
  return a;
}

py::array_t<double> array_from_f(const TensorF& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  for (int64_t i = 0; i < t.numel(); ++i) a.mutable_data()[i] = t[i];
  return a;
}

TensorF tensorf_from(const DArray& a) {
  return tensor_from(a).cast<float>();
}

std::vector<std::array<int32_t, 2>> edges_from(const std::vector<std::pair<int, int>>& e) {
  std::vector<std::array<int32_t, 2>> out;
  out.reserve(e.size());
  for (auto& [s, d] : e) out.push_back({static_cast<int32_t>(s), static_cast<int32_t>(d)});
  return out;
}

std::vector<std::pair<int, int>> edges_to(const std::vector<std::array<int32_t, 2>>& e) {
  std::vector<std::pair<int, int>> out;
  out.reserve(e.size());
  for (auto& p : e) out.emplace_back(p[0], p[1]);
  return out;
}

GraphBatch single_graph(int64_t n_nodes, const std::vector<std::pair<int, int>>& edges) {
  GraphBatch g;
  g.n_batch = 1;
  g.n_nodes = n_nodes;
  g.edges.push_back(edges_from(edges));
  return g;
}

TensorF batched(const TensorF& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return t.reshaped(s);
}

TensorF debatched(const TensorF& t) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  return t.reshaped(s);
}

struct ModelHandle {
  EgtnModel<float> model;
  NoiseSchedule sched;
  double beta_start, beta_end;

  static ModelHandle create(int n_layers, int hidden_dim, int time_emb_dim, int n_heads,
                            int feat_dim, int space_dim, bool conditional, int t_target,
                            int sched_steps, double beta_start, double beta_end,
                            uint64_t seed) {
    EgtnConfig cfg;
    cfg.n_layers = n_layers;
    cfg.hidden_dim = hidden_dim;
    cfg.time_emb_dim = time_emb_dim;
    cfg.n_heads = n_heads;
    cfg.feat_dim = feat_dim;
    cfg.space_dim = space_dim;
    cfg.conditional = conditional;
    cfg.t_target = t_target;
    Rng rng(seed);
    return {EgtnModel<float>::create(cfg, rng),
            make_linear_schedule(sched_steps, beta_start, beta_end), beta_start, beta_end};
  }

  static ModelHandle load(const std::string& path) {
    LoadedCheckpoint lc = load_checkpoint(path);
    return {std::move(lc.model),
            make_linear_schedule(lc.meta.sched_steps, lc.meta.beta_start, lc.meta.beta_end),
            lc.meta.beta_start, lc.meta.beta_end};
  }

  void save(const std::string& path) {
    CheckpointMeta meta;
    meta.cfg = model.cfg;
    meta.sched_steps = sched.n_steps;
    meta.beta_start = beta_start;
    meta.beta_end = beta_end;
    save_checkpoint(path, model, meta);
  }

  py::array_t<double> predict_eps(const DArray& x, const DArray& feats,
                                  const std::vector<std::pair<int, int>>& edges, int tau,
                                  py::object x_cond) {
    ag::NoGradGuard ng;
    TensorF xf = batched(tensorf_from(x));
    GraphBatch g = single_graph(xf.dim(2), edges);
    Var<float> hv = ag::constant(batched(tensorf_from(feats)));
    std::vector<int> taus{tau};
    TensorF eps;
    if (x_cond.is_none()) {
      eps = predict_eps_uncond(model, ag::constant(xf), hv, g, taus)->value;
    } else {
      TensorF xc = batched(tensorf_from(x_cond.cast<DArray>()));
      eps = predict_eps_cond(model, ag::constant(xf), ag::constant(xc), hv, g, taus)->value;
    }
    return array_from_f(debatched(eps));
  }

  py::array_t<double> sample(const DArray& feats, const std::vector<std::pair<int, int>>& edges,
                             int64_t frames, uint64_t seed) {
    TensorF hf = batched(tensorf_from(feats));
    GraphBatch g = single_graph(hf.dim(1), edges);
    Rng rng(seed);
    return array_from_f(debatched(sample_uncond(model, sched, hf, g, frames, rng)));
  }

  py::array_t<double> forecast(const DArray& x_cond, const DArray& feats,
                               const std::vector<std::pair<int, int>>& edges, uint64_t seed) {
    TensorF xc = batched(tensorf_from(x_cond));
    TensorF hf = batched(tensorf_from(feats));
    GraphBatch g = single_graph(xc.dim(2), edges);
    Rng rng(seed);
    return array_from_f(
        debatched(sample_cond(model, sched, xc, hf, g, model.cfg.t_target, rng)));
  }

  int64_t param_count() { return model.param_count(); }
  bool conditional() const { return model.cfg.conditional; }
};

py::tuple traj_to_py(const GeoTrajectory& tr) {
  return py::make_tuple(array_from(tr.coords), array_from(tr.node_feats), edges_to(tr.edges));
}

GeoTrajectory traj_from_py(const DArray& coords, const DArray& feats,
                           const std::vector<std::pair<int, int>>& edges) {
  GeoTrajectory tr;
  tr.coords = tensor_from(coords);
  tr.node_feats = tensor_from(feats);
  tr.edges = edges_from(edges);
  return tr;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SE(3)-equivariant trajectory diffusion core";
  m.attr("__version__") = "0.1.0";

  m.def(
      "project_zero_com",
      [](const DArray& x) { return array_from(project_zero_com(tensor_from(x))); },
      py::arg("coords"), "Remove the global center of mass from every component");

  m.def(
      "sample_subspace_gaussian",
      [](const std::vector<int64_t>& shape, uint64_t seed) {
        Rng rng(seed);
        return array_from(
            sample_subspace_gaussian<double>(rng, Shape(shape.begin(), shape.end())));
      },
      py::arg("shape"), py::arg("seed"),
      "Standard Gaussian restricted to the zero-mean subspace");

  m.def(
      "random_rotation",
      [](int d, uint64_t seed) {
        Rng rng(seed);
        return array_from(random_rotation(rng, d));
      },
      py::arg("dim"), py::arg("seed"));

  m.def(
      "apply_rigid_motion",
      [](const DArray& coords, const DArray& rot, const std::vector<double>& shift) {
        RigidMotion mo{tensor_from(rot), shift};
        return array_from(apply_motion(tensor_from(coords), mo));
      },
      py::arg("coords"), py::arg("rotation"), py::arg("shift"));

  m.def(
      "simulate",
      [](const std::string& kind, int n_bodies, int64_t frames, uint64_t seed, int space_dim,
         double dt) {
        SimParams p;
        p.kind = system_kind_from_string(kind);
        p.n_bodies = n_bodies;
        p.space_dim = space_dim;
        p.dt = dt;
        Rng rng(seed);
        return traj_to_py(roll_trajectory(rng, p, frames));
      },
      py::arg("kind"), py::arg("n_bodies"), py::arg("frames"), py::arg("seed"),
      py::arg("space_dim") = 3, py::arg("dt") = 0.1,
      "Simulate one trajectory; returns (coords, node_feats, edges)");

  m.def(
      "linear_schedule",
      [](int n_steps, double beta_start, double beta_end) {
        NoiseSchedule s = make_linear_schedule(n_steps, beta_start, beta_end);
        py::dict d;
        d["n_steps"] = s.n_steps;
        d["beta"] = py::cast(std::vector<double>(s.beta.begin() + 1, s.beta.end()));
        d["alpha_bar"] =
            py::cast(std::vector<double>(s.alpha_bar.begin() + 1, s.alpha_bar.end()));
        return d;
      },
      py::arg("n_steps"), py::arg("beta_start") = 1e-4, py::arg("beta_end") = 2e-2);

  m.def(
      "ade_fde",
      [](const DArray& pred, const DArray& ref) {
        AdeFde r = ade_fde(tensor_from(pred), tensor_from(ref));
        return py::make_tuple(r.ade, r.fde);
      },
      py::arg("pred"), py::arg("ref"));

  m.def(
      "marginal_score",
      [](const std::vector<DArray>& gen, const std::vector<DArray>& ref, int bins) {
        auto lift = [](const std::vector<DArray>& arrs) {
          std::vector<GeoTrajectory> out;
          for (const auto& a : arrs) {
            GeoTrajectory tr;
            tr.coords = tensor_from(a);
            tr.node_feats = TensorD({tr.coords.dim(1), 1});
            out.push_back(std::move(tr));
          }
          return out;
        };
        return marginal_score(lift(gen), lift(ref), bins);
      },
      py::arg("gen"), py::arg("ref"), py::arg("bins") = 50);

  m.def(
      "read_trajectories",
      [](const std::string& path) {
        py::list out;
        for (const auto& tr : read_gtrj(path)) out.append(traj_to_py(tr));
        return out;
      },
      py::arg("path"));

  m.def(
      "write_trajectories",
      [](const std::string& path, const std::vector<py::tuple>& trajs) {
        std::vector<GeoTrajectory> out;
        for (const auto& t : trajs)
          out.push_back(traj_from_py(t[0].cast<DArray>(), t[1].cast<DArray>(),
                                     t[2].cast<std::vector<std::pair<int, int>>>()));
        write_gtrj(path, out);
      },
      py::arg("path"), py::arg("trajectories"));

  py::class_<ModelHandle>(m, "Model")
      .def_static("create", &ModelHandle::create, py::arg("n_layers") = 6,
                  py::arg("hidden_dim") = 128, py::arg("time_emb_dim") = 32,
                  py::arg("n_heads") = 1, py::arg("feat_dim") = 1, py::arg("space_dim") = 3,
                  py::arg("conditional") = false, py::arg("t_target") = 0,
                  py::arg("sched_steps") = 1000, py::arg("beta_start") = 1e-4,
                  py::arg("beta_end") = 2e-2, py::arg("seed") = 0)
      .def_static("load", &ModelHandle::load, py::arg("path"))
      .def("save", &ModelHandle::save, py::arg("path"))
      .def("predict_eps", &ModelHandle::predict_eps, py::arg("coords"), py::arg("node_feats"),
           py::arg("edges"), py::arg("tau"), py::arg("cond_coords") = py::none())
      .def("sample", &ModelHandle::sample, py::arg("node_feats"), py::arg("edges"),
           py::arg("frames"), py::arg("seed") = 0)
      .def("forecast", &ModelHandle::forecast, py::arg("cond_coords"), py::arg("node_feats"),
           py::arg("edges"), py::arg("seed") = 0)
      .def_property_readonly("param_count", &ModelHandle::param_count)
      .def_property_readonly("conditional", &ModelHandle::conditional);
}

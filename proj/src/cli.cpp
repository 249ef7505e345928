#include "geotdm/cli.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <optional>

#include "CLI11.hpp"
#include "geotdm/checkpoint.hpp"
#include "geotdm/config.hpp"
#include "geotdm/diffusion.hpp"
#include "geotdm/eval.hpp"
#include "geotdm/gtrj.hpp"
#include "geotdm/train.hpp"

namespace geotdm {

namespace {

SimParams sim_params_from(const Config& c) {
  SimParams p;
  p.kind = system_kind_from_string(c.get_str("system", "kind", "charged"));
  p.n_bodies = static_cast<int>(c.get_int("system", "n_bodies", p.n_bodies));
  p.space_dim = static_cast<int>(c.get_int("system", "space_dim", p.space_dim));
  p.dt = c.get_float("system", "dt", p.dt);
  p.substeps = static_cast<int>(c.get_int("system", "substeps", p.substeps));
  p.softening = c.get_float("system", "softening", p.softening);
  p.coupling = c.get_float("system", "coupling", p.coupling);
  p.rest_length = c.get_float("system", "rest_length", p.rest_length);
  p.spring_prob = c.get_float("system", "spring_prob", p.spring_prob);
  p.pos_scale = c.get_float("system", "pos_scale", p.pos_scale);
  p.vel_scale = c.get_float("system", "vel_scale", p.vel_scale);
  p.mass_lo = c.get_float("system", "mass_lo", p.mass_lo);
  p.mass_hi = c.get_float("system", "mass_hi", p.mass_hi);
  return p;
}

DatasetManifest manifest_from(const Config& c) {
  DatasetManifest m;
  m.n_train = c.get_int("dataset", "n_train", m.n_train);
  m.n_valid = c.get_int("dataset", "n_valid", m.n_valid);
  m.n_test = c.get_int("dataset", "n_test", m.n_test);
  m.t_total = c.get_int("dataset", "t_total", m.t_total);
  m.t_cond = c.get_int("dataset", "t_cond", m.t_cond);
  m.t_target = c.get_int("dataset", "t_target", m.t_target);
  m.seed = static_cast<uint64_t>(c.get_int("run", "seed", 0));
  return m;
}

Config load_run_config(const std::string& path) {
  Config c = Config::parse_file(path);
  c.validate(run_config_schema());
  return c;
}

struct ModelBundle {
  EgtnModel<float> model;
  NoiseSchedule sched;
  CheckpointMeta meta;
};

ModelBundle load_bundle(const std::string& path) {
  LoadedCheckpoint lc = load_checkpoint(path);
  NoiseSchedule s = make_linear_schedule(lc.meta.sched_steps, lc.meta.beta_start,
                                         lc.meta.beta_end);
  return {std::move(lc.model), std::move(s), lc.meta};
}

// Consecutive runs of trajectories with matching shape, capped at batch_size.
std::vector<std::vector<int64_t>> batch_plan(const std::vector<GeoTrajectory>& trajs,
                                             int64_t count, int batch_size) {
  std::vector<std::vector<int64_t>> plan;
  std::vector<int64_t> cur;
  auto same = [&](int64_t a, int64_t b) {
    const auto& x = trajs[static_cast<size_t>(a % static_cast<int64_t>(trajs.size()))];
    const auto& y = trajs[static_cast<size_t>(b % static_cast<int64_t>(trajs.size()))];
    return x.nodes() == y.nodes() && x.space_dim() == y.space_dim() &&
           x.feat_dim() == y.feat_dim() && x.frames() == y.frames();
  };
  for (int64_t i = 0; i < count; ++i) {
    if (!cur.empty() &&
        (static_cast<int>(cur.size()) >= batch_size || !same(cur.front(), i))) {
      plan.push_back(cur);
      cur.clear();
    }
    cur.push_back(i);
  }
  if (!cur.empty()) plan.push_back(cur);
  return plan;
}

std::vector<int64_t> modulo_indices(const std::vector<int64_t>& idx, size_t n) {
  std::vector<int64_t> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = idx[i] % static_cast<int64_t>(n);
  return out;
}

GeoTrajectory traj_from_batch(const TensorF& coords, int64_t b, const GeoTrajectory& src) {
  int64_t T = coords.dim(1), N = coords.dim(2), D = coords.dim(3);
  GeoTrajectory out;
  out.coords = TensorD({T, N, D});
  int64_t base = b * T * N * D;
  for (int64_t i = 0; i < T * N * D; ++i) out.coords[i] = coords[base + i];
  out.node_feats = src.node_feats;
  out.edges = src.edges;
  return out;
}

GeoTrajectory stitch(const GeoTrajectory& prefix, const GeoTrajectory& body,
                     const GeoTrajectory& suffix, bool with_prefix, bool with_suffix) {
  int64_t N = body.nodes(), D = body.space_dim();
  int64_t T = body.frames() + (with_prefix ? prefix.frames() : 0) +
              (with_suffix ? suffix.frames() : 0);
  GeoTrajectory out;
  out.coords = TensorD({T, N, D});
  int64_t at = 0;
  auto paste = [&](const GeoTrajectory& part) {
    std::copy_n(part.coords.data(), part.coords.numel(), out.coords.data() + at * N * D);
    at += part.frames();
  };
  if (with_prefix) paste(prefix);
  paste(body);
  if (with_suffix) paste(suffix);
  out.node_feats = body.node_feats;
  out.edges = body.edges;
  return out;
}

GeoTrajectory slice_traj(const GeoTrajectory& tr, int64_t t0, int64_t t1) {
  int64_t N = tr.nodes(), D = tr.space_dim();
  GeoTrajectory out;
  out.coords = TensorD({t1 - t0, N, D});
  std::copy_n(tr.coords.data() + t0 * N * D, (t1 - t0) * N * D, out.coords.data());
  out.node_feats = tr.node_feats;
  out.edges = tr.edges;
  return out;
}

void write_outputs(const std::string& path, const std::vector<GeoTrajectory>& trajs, bool csv) {
  write_gtrj(path, trajs);
  std::cout << "wrote " << trajs.size() << " trajectories to " << path << "\n";
  if (csv) {
    std::string cpath = path + ".csv";
    write_csv(cpath, trajs);
    std::cout << "wrote " << cpath << "\n";
  }
}

TensorF cond_window_tensor(const std::vector<GeoTrajectory>& trajs,
                           const std::vector<int64_t>& idx, int64_t t0, int64_t t1) {
  return make_batch<float>(trajs, idx, t0, t1).coords;
}

// ---- subcommand bodies --------------------------------------------------------

struct CommonOpts {
  std::string config;
  std::string out;
  int64_t seed = -1;  // negative means "not set"
  bool csv = false;
};

void cmd_simulate(const CommonOpts& o) {
  Config c = load_run_config(o.config);
  SimParams p = sim_params_from(c);
  DatasetManifest m = manifest_from(c);
  if (o.seed >= 0) m.seed = static_cast<uint64_t>(o.seed);
  std::string dir = !o.out.empty() ? o.out : c.get_str("dataset", "dir");
  build_dataset(p, m, dir);
  std::cout << "dataset " << to_string(p.kind) << " n=" << p.n_bodies << " at " << dir << ": "
            << m.n_train << " train, " << m.n_valid << " valid, " << m.n_test << " test, "
            << m.t_total << " frames each\n";
  if (o.csv)
    for (const char* split : {"train", "valid", "test"})
      write_csv(dir + "/" + split + ".csv", load_split(dir, split));
}

void cmd_train(const CommonOpts& o, const std::string& mode, bool quiet) {
  Config c = load_run_config(o.config);
  bool conditional = c.get_bool("model", "conditional", false);
  if (mode == "cond") conditional = true;
  if (mode == "uncond") conditional = false;
  std::string dir = c.get_str("dataset", "dir");
  auto train_set = load_split(dir, "train");
  auto valid_set = load_split(dir, "valid");

  TrainConfig tc;
  tc.conditional = conditional;
  tc.t_cond = conditional ? c.get_int("dataset", "t_cond", 10) : 0;
  tc.t_target = c.get_int("dataset", "t_target", 20);
  tc.batch_size = static_cast<int>(c.get_int("train", "batch_size", 128));
  tc.max_epochs = static_cast<int>(c.get_int("train", "max_epochs", 100));
  tc.valid_interval = static_cast<int>(c.get_int("train", "valid_interval", 20));
  tc.patience = static_cast<int>(c.get_int("train", "patience", 5));
  tc.adam.lr = c.get_float("train", "learning_rate", 1e-4);
  tc.adam.beta1 = c.get_float("train", "adam_beta1", 0.9);
  tc.adam.beta2 = c.get_float("train", "adam_beta2", 0.999);
  tc.adam.eps = c.get_float("train", "adam_eps", 1e-8);
  tc.adam.clip_norm = c.get_float("train", "clip_norm", 1.0);
  tc.seed = o.seed >= 0 ? static_cast<uint64_t>(o.seed)
                        : static_cast<uint64_t>(c.get_int("run", "seed", 0));
  tc.out_dir = !o.out.empty() ? o.out : c.get_str("run", "out");
  tc.sched_steps = static_cast<int>(c.get_int("schedule", "n_steps", 1000));
  tc.beta_start = c.get_float("schedule", "beta_start", 1e-4);
  tc.beta_end = c.get_float("schedule", "beta_end", 2e-2);

  if (train_set.empty()) throw std::runtime_error("empty training split in " + dir);
  EgtnConfig mc;
  mc.n_layers = static_cast<int>(c.get_int("model", "n_layers", 6));
  mc.hidden_dim = static_cast<int>(c.get_int("model", "hidden_dim", 128));
  mc.time_emb_dim = static_cast<int>(c.get_int("model", "time_emb_dim", 32));
  mc.n_heads = static_cast<int>(c.get_int("model", "n_heads", 1));
  mc.feat_dim = static_cast<int>(train_set[0].feat_dim());
  mc.space_dim = static_cast<int>(train_set[0].space_dim());
  mc.conditional = conditional;
  mc.t_target = conditional ? static_cast<int>(tc.t_target) : 0;

  Rng init_rng = Rng(tc.seed).fork(4);
  EgtnModel<float> model = EgtnModel<float>::create(mc, init_rng);
  NoiseSchedule sched = make_linear_schedule(tc.sched_steps, tc.beta_start, tc.beta_end);
  std::cout << (conditional ? "conditional" : "unconditional") << " model, "
            << model.param_count() << " parameters, " << train_set.size()
            << " training trajectories\n";
  TrainResult r = train_model(model, sched, train_set, valid_set, tc,
                              quiet ? nullptr : &std::cout);
  std::cout << "trained " << r.epochs << " epochs (" << r.steps << " steps), final train loss "
            << r.final_train << ", best valid loss " << r.best_valid
            << (r.early_stopped ? ", stopped early" : "") << "\n";
  if (!r.best_path.empty())
    std::cout << "checkpoints: " << r.best_path << ", " << r.last_path << "\n";
}

void cmd_sample(const CommonOpts& o, const std::string& ckpt, const std::string& data,
                int64_t frames, int64_t count, int batch) {
  ModelBundle b = load_bundle(ckpt);
  if (b.model.cfg.conditional)
    throw std::runtime_error("checkpoint holds a conditional model; use forecast");
  auto src = read_gtrj(data);
  if (src.empty()) throw std::runtime_error("no trajectories in " + data);
  if (count <= 0) count = static_cast<int64_t>(src.size());
  Rng rng(o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0);
  std::vector<GeoTrajectory> out;
  for (const auto& idx : batch_plan(src, count, batch)) {
    auto rows = modulo_indices(idx, src.size());
    TrajBatch<float> tb = make_batch<float>(src, rows, 0, 1);
    TensorF coords = sample_uncond(b.model, b.sched, tb.feats, tb.graph, frames, rng);
    for (size_t i = 0; i < rows.size(); ++i)
      out.push_back(traj_from_batch(coords, static_cast<int64_t>(i),
                                    src[static_cast<size_t>(rows[i])]));
  }
  write_outputs(o.out, out, o.csv);
}

void cmd_forecast(const CommonOpts& o, const std::string& ckpt, const std::string& data,
                  int64_t t_cond, int64_t k, int batch, bool full) {
  ModelBundle b = load_bundle(ckpt);
  if (!b.model.cfg.conditional)
    throw std::runtime_error("checkpoint holds an unconditional model; use sample");
  auto src = read_gtrj(data);
  if (src.empty()) throw std::runtime_error("no trajectories in " + data);
  int64_t t_target = b.model.cfg.t_target;
  if (t_cond <= 0) t_cond = src[0].frames() - t_target;
  if (t_cond < 1)
    throw std::runtime_error("cannot infer a positive condition length; pass --t-cond");
  Rng rng(o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0);
  std::vector<GeoTrajectory> out(src.size() * static_cast<size_t>(k));
  for (const auto& idx : batch_plan(src, static_cast<int64_t>(src.size()), batch)) {
    TrajBatch<float> tb = make_batch<float>(src, idx, 0, t_cond);
    for (int64_t rep = 0; rep < k; ++rep) {
      TensorF coords =
          sample_cond(b.model, b.sched, tb.coords, tb.feats, tb.graph, t_target, rng);
      for (size_t i = 0; i < idx.size(); ++i) {
        const GeoTrajectory& s = src[static_cast<size_t>(idx[i])];
        GeoTrajectory gen = traj_from_batch(coords, static_cast<int64_t>(i), s);
        if (full) gen = stitch(slice_traj(s, 0, t_cond), gen, gen, true, false);
        out[static_cast<size_t>(idx[i] * k + rep)] = std::move(gen);
      }
    }
  }
  write_outputs(o.out, out, o.csv);
}

void cmd_interpolate(const CommonOpts& o, const std::string& ckpt, const std::string& data,
                     int64_t t_head, int64_t t_tail, int batch, bool full) {
  ModelBundle b = load_bundle(ckpt);
  if (!b.model.cfg.conditional)
    throw std::runtime_error("interpolation needs a conditional model checkpoint");
  auto src = read_gtrj(data);
  if (src.empty()) throw std::runtime_error("no trajectories in " + data);
  int64_t gap = b.model.cfg.t_target;
  if (src[0].frames() < t_head + gap + t_tail)
    throw std::runtime_error("trajectories have " + std::to_string(src[0].frames()) +
                             " frames, need at least " +
                             std::to_string(t_head + gap + t_tail));
  Rng rng(o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0);
  std::vector<GeoTrajectory> out;
  for (const auto& idx : batch_plan(src, static_cast<int64_t>(src.size()), batch)) {
    TensorF head = cond_window_tensor(src, idx, 0, t_head);
    TensorF tail = cond_window_tensor(src, idx, t_head + gap, t_head + gap + t_tail);
    TrajBatch<float> tb = make_batch<float>(src, idx, 0, 1);
    TensorF coords =
        interpolate_gap(b.model, b.sched, head, tail, tb.feats, tb.graph, gap, rng);
    for (size_t i = 0; i < idx.size(); ++i) {
      const GeoTrajectory& s = src[static_cast<size_t>(idx[i])];
      GeoTrajectory gen = traj_from_batch(coords, static_cast<int64_t>(i), s);
      if (full)
        gen = stitch(slice_traj(s, 0, t_head), gen,
                     slice_traj(s, t_head + gap, t_head + gap + t_tail), true, true);
      out.push_back(std::move(gen));
    }
  }
  write_outputs(o.out, out, o.csv);
}

// Constant-velocity extrapolation from the last two condition frames.
TensorF extrapolate_draft(const TensorF& cond, int64_t t_target) {
  int64_t B = cond.dim(0), Tc = cond.dim(1), N = cond.dim(2), D = cond.dim(3);
  TensorF out({B, t_target, N, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < t_target; ++t)
      for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < D; ++d) {
          float last = cond.at({b, Tc - 1, n, d});
          float vel = Tc >= 2 ? last - cond.at({b, Tc - 2, n, d}) : 0.0f;
          out.at({b, t, n, d}) = last + vel * static_cast<float>(t + 1);
        }
  return out;
}

void cmd_refine(const CommonOpts& o, const std::string& ckpt, const std::string& data,
                const std::string& draft_path, int64_t t_cond, int k_steps, int batch) {
  ModelBundle b = load_bundle(ckpt);
  if (!b.model.cfg.conditional)
    throw std::runtime_error("refinement needs a conditional model checkpoint");
  auto src = read_gtrj(data);
  if (src.empty()) throw std::runtime_error("no trajectories in " + data);
  int64_t t_target = b.model.cfg.t_target;
  if (t_cond <= 0) t_cond = src[0].frames() - t_target;
  if (t_cond < 1)
    throw std::runtime_error("cannot infer a positive condition length; pass --t-cond");
  std::vector<GeoTrajectory> drafts;
  if (!draft_path.empty()) {
    drafts = read_gtrj(draft_path);
    if (drafts.size() != src.size())
      throw std::runtime_error("draft count " + std::to_string(drafts.size()) +
                               " does not match data count " + std::to_string(src.size()));
  }
  Rng rng(o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0);
  std::vector<GeoTrajectory> out;
  for (const auto& idx : batch_plan(src, static_cast<int64_t>(src.size()), batch)) {
    TrajBatch<float> tb = make_batch<float>(src, idx, 0, t_cond);
    TensorF x_init = drafts.empty()
                         ? extrapolate_draft(tb.coords, t_target)
                         : make_batch<float>(drafts, idx, 0, t_target).coords;
    TensorF coords = refine_trajectory(b.model, b.sched, x_init, tb.coords, tb.feats, tb.graph,
                                       k_steps, rng);
    for (size_t i = 0; i < idx.size(); ++i)
      out.push_back(
          traj_from_batch(coords, static_cast<int64_t>(i), src[static_cast<size_t>(idx[i])]));
  }
  write_outputs(o.out, out, o.csv);
}

void cmd_compose(const CommonOpts& o, const std::string& cond_ckpt,
                 const std::string& uncond_ckpt, const std::string& data,
                 const std::string& init_data, int segments, int64_t window, int batch) {
  ModelBundle cond = load_bundle(cond_ckpt);
  if (!cond.model.cfg.conditional)
    throw std::runtime_error("compose needs a conditional model checkpoint");
  int64_t seg_len = cond.model.cfg.t_target;
  if (window < 1 || window > seg_len)
    throw std::runtime_error("condition window must lie in [1, " + std::to_string(seg_len) +
                             "]");
  std::optional<ModelBundle> uncond;
  if (!uncond_ckpt.empty()) {
    uncond.emplace(load_bundle(uncond_ckpt));
    if (uncond->model.cfg.conditional)
      throw std::runtime_error("--uncond-ckpt must hold an unconditional model");
  }
  std::vector<GeoTrajectory> inits;
  if (!init_data.empty()) inits = read_gtrj(init_data);
  if (!uncond && inits.empty())
    throw std::runtime_error("compose needs --uncond-ckpt or --init-data");
  auto src = read_gtrj(!data.empty() ? data : init_data);
  if (src.empty()) throw std::runtime_error("no source trajectories for features and graphs");
  if (!inits.empty() && inits.size() != src.size())
    throw std::runtime_error("--init-data count does not match the data count");

  Rng rng(o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0);
  std::vector<GeoTrajectory> out;
  for (const auto& idx : batch_plan(src, static_cast<int64_t>(src.size()), batch)) {
    TrajBatch<float> tb = make_batch<float>(src, idx, 0, 1);
    TensorF first;
    if (!inits.empty()) first = make_batch<float>(inits, idx, 0, seg_len).coords;
    TensorF coords = compose_long(uncond ? &uncond->model : nullptr, cond.model,
                                  uncond ? uncond->sched : cond.sched, cond.sched, tb.feats,
                                  tb.graph, segments, seg_len, window, rng,
                                  inits.empty() ? nullptr : &first);
    for (size_t i = 0; i < idx.size(); ++i)
      out.push_back(
          traj_from_batch(coords, static_cast<int64_t>(i), src[static_cast<size_t>(idx[i])]));
  }
  write_outputs(o.out, out, o.csv);
}

void cmd_evaluate(const CommonOpts& o, const std::string& gen_path, const std::string& ref_path,
                  int64_t k, int bins, int64_t ref_offset, bool surrogate, int steps, bool kv) {
  auto gen = read_gtrj(gen_path);
  auto ref = read_gtrj(ref_path);
  if (gen.empty() || ref.empty()) throw std::runtime_error("empty trajectory file");
  if (k < 1) throw std::runtime_error("--k must be at least 1");
  if (gen.size() != ref.size() * static_cast<size_t>(k))
    throw std::runtime_error("generated count " + std::to_string(gen.size()) +
                             " is not k=" + std::to_string(k) + " times reference count " +
                             std::to_string(ref.size()));
  int64_t gen_T = gen[0].frames();
  if (ref_offset < 0) ref_offset = ref[0].frames() - gen_T;
  if (ref_offset < 0 || ref_offset + gen_T > ref[0].frames())
    throw std::runtime_error("reference trajectories are shorter than generated ones");
  std::vector<GeoTrajectory> ref_win;
  ref_win.reserve(ref.size());
  for (const auto& r : ref) ref_win.push_back(slice_traj(r, ref_offset, ref_offset + gen_T));

  MetricReport rep;
  AdeFde mean_agg, min_agg;
  for (size_t i = 0; i < ref_win.size(); ++i) {
    std::vector<TensorD> preds;
    for (int64_t j = 0; j < k; ++j)
      preds.push_back(gen[i * static_cast<size_t>(k) + static_cast<size_t>(j)].coords);
    AdeFde m = ade_fde_over_k(preds, ref_win[i].coords, false);
    mean_agg.ade += m.ade;
    mean_agg.fde += m.fde;
    AdeFde mn = ade_fde_over_k(preds, ref_win[i].coords, true);
    min_agg.ade += mn.ade;
    min_agg.fde += mn.fde;
  }
  auto n = static_cast<double>(ref_win.size());
  rep.add("ade_mean", mean_agg.ade / n);
  rep.add("fde_mean", mean_agg.fde / n);
  if (k > 1) {
    rep.add("ade_min_k", min_agg.ade / n);
    rep.add("fde_min_k", min_agg.fde / n);
  }
  rep.add("marginal", marginal_score(gen, ref_win, bins));
  if (surrogate) {
    SurrogateConfig sc;
    sc.steps = steps;
    sc.seed = o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0;
    SurrogateScores ss = surrogate_scores(gen, ref_win, sc);
    rep.add("classification_ce", ss.classification_ce);
    rep.add("prediction_mse", ss.prediction_mse);
  }
  std::cout << (kv ? rep.kv() : rep.table());
}

int cmd_check_equivariance(const CommonOpts& o, const std::string& ckpt,
                           const std::string& data, int motions, double tol, int64_t t_cond,
                           int count) {
  ModelBundle b = load_bundle(ckpt);
  auto src = read_gtrj(data);
  if (src.empty()) throw std::runtime_error("no trajectories in " + data);
  count = std::min<int>(count, static_cast<int>(src.size()));
  std::vector<int64_t> idx(static_cast<size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0);
  int d = b.model.cfg.space_dim;

  auto rel_dev = [](const TensorF& a, const TensorF& ref) {
    double scale = 0, dev = 0;
    for (int64_t i = 0; i < ref.numel(); ++i) scale = std::max(scale, std::abs(double(ref[i])));
    for (int64_t i = 0; i < ref.numel(); ++i)
      dev = std::max(dev, std::abs(double(a[i]) - double(ref[i])));
    return dev / (scale + 1e-12);
  };

  double worst = 0;
  if (!b.model.cfg.conditional) {
    int64_t T = std::min<int64_t>(src[0].frames(), 8);
    TrajBatch<float> tb = make_batch<float>(src, idx, 0, T);
    std::vector<int> taus(idx.size(), std::max(1, b.sched.n_steps / 2));
    ag::NoGradGuard ng;
    TensorF eps0 = predict_eps_uncond(b.model, ag::constant(tb.coords),
                                      ag::constant(tb.feats), tb.graph, taus)
                       ->value;
    for (int m = 0; m < motions; ++m) {
      RigidMotion motion = random_rigid_motion(rng, d, 5.0);
      TensorF xm = apply_motion(tb.coords, motion);
      TensorF em = predict_eps_uncond(b.model, ag::constant(xm), ag::constant(tb.feats),
                                      tb.graph, taus)
                       ->value;
      TensorF expected = apply_rotation(eps0, motion.rot);
      worst = std::max(worst, rel_dev(em, expected));
    }
    std::cout << "noise prediction under " << motions
              << " rigid motions: max relative deviation " << worst << "\n";
  } else {
    int64_t t_target = b.model.cfg.t_target;
    if (t_cond <= 0) t_cond = src[0].frames() - t_target;
    if (t_cond < 1)
      throw std::runtime_error("cannot infer a positive condition length; pass --t-cond");
    TrajBatch<float> tb = make_batch<float>(src, idx, 0, t_cond);
    NoiseLog<float> log;
    Rng chain_rng = rng.fork(99);
    TensorF y0 = sample_cond(b.model, b.sched, tb.coords, tb.feats, tb.graph, t_target,
                             chain_rng, &log);
    for (int m = 0; m < motions; ++m) {
      RigidMotion motion = random_rigid_motion(rng, d, 5.0);
      NoiseLog<float> replay;
      replay.replay = true;
      for (const auto& z : log.draws) replay.draws.push_back(apply_rotation(z, motion.rot));
      TensorF xc = apply_motion(tb.coords, motion);
      Rng unused(0);
      TensorF ym = sample_cond(b.model, b.sched, xc, tb.feats, tb.graph, t_target, unused,
                               &replay);
      TensorF expected = apply_motion(y0, motion);
      worst = std::max(worst, rel_dev(ym, expected));
    }
    std::cout << "conditional sampling chain under " << motions
              << " rigid motions: max relative deviation " << worst << "\n";
  }
  if (worst <= tol) {
    std::cout << "within tolerance " << tol << "\n";
    return 0;
  }
  std::cout << "EXCEEDS tolerance " << tol << "\n";
  return 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"equivariant trajectory diffusion toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  CommonOpts sim_o;
  auto* sim = app.add_subcommand("simulate", "Simulate a dataset of particle trajectories");
  sim->add_option("--config", sim_o.config, "run configuration file")->required();
  sim->add_option("--out", sim_o.out, "output directory (overrides [dataset] dir)");
  sim->add_option("--seed", sim_o.seed, "seed override");
  sim->add_flag("--csv", sim_o.csv, "also write CSV copies of each split");
  sim->callback([&] { cmd_simulate(sim_o); });

  CommonOpts train_o;
  std::string train_mode;
  bool train_quiet = false;
  auto* tr = app.add_subcommand("train", "Train a diffusion model on a dataset");
  tr->add_option("--config", train_o.config, "run configuration file")->required();
  tr->add_option("--mode", train_mode, "uncond or cond (overrides [model] conditional)")
      ->check(CLI::IsMember({"uncond", "cond"}));
  tr->add_option("--out", train_o.out, "output directory (overrides [run] out)");
  tr->add_option("--seed", train_o.seed, "seed override");
  tr->add_flag("--quiet", train_quiet, "suppress per-epoch progress");
  tr->callback([&] { cmd_train(train_o, train_mode, train_quiet); });

  CommonOpts sam_o;
  std::string sam_ckpt, sam_data;
  int64_t sam_frames = 0, sam_count = 0;
  int sam_batch = 16;
  auto* sam = app.add_subcommand("sample", "Sample trajectories from an unconditional model");
  sam->add_option("--ckpt", sam_ckpt, "model checkpoint")->required();
  sam->add_option("--data", sam_data, "trajectory file supplying graphs and node features")
      ->required();
  sam->add_option("--frames", sam_frames, "frames per sample")->required();
  sam->add_option("--count", sam_count, "samples to draw (default: one per data entry)");
  sam->add_option("--batch", sam_batch, "sampling batch size");
  sam->add_option("--seed", sam_o.seed, "sampling seed");
  sam->add_option("--out", sam_o.out, "output trajectory file")->required();
  sam->add_flag("--csv", sam_o.csv, "also write a CSV copy");
  sam->callback([&] { cmd_sample(sam_o, sam_ckpt, sam_data, sam_frames, sam_count, sam_batch); });

  CommonOpts fc_o;
  std::string fc_ckpt, fc_data;
  int64_t fc_tcond = 0, fc_k = 1;
  int fc_batch = 16;
  bool fc_full = false;
  auto* fc = app.add_subcommand("forecast", "Generate future frames from observed ones");
  fc->add_option("--ckpt", fc_ckpt, "conditional model checkpoint")->required();
  fc->add_option("--data", fc_data, "trajectory file with condition frames")->required();
  fc->add_option("--t-cond", fc_tcond,
                 "condition frames (default: data frames minus model target length)");
  fc->add_option("--k", fc_k, "samples per trajectory");
  fc->add_option("--batch", fc_batch, "sampling batch size");
  fc->add_option("--seed", fc_o.seed, "sampling seed");
  fc->add_option("--out", fc_o.out, "output trajectory file")->required();
  fc->add_flag("--full", fc_full, "prepend the condition frames to each output");
  fc->add_flag("--csv", fc_o.csv, "also write a CSV copy");
  fc->callback([&] { cmd_forecast(fc_o, fc_ckpt, fc_data, fc_tcond, fc_k, fc_batch, fc_full); });

  CommonOpts ip_o;
  std::string ip_ckpt, ip_data;
  int64_t ip_head = 0, ip_tail = 0;
  int ip_batch = 16;
  bool ip_full = false;
  auto* ip = app.add_subcommand("interpolate", "Fill a gap between observed head and tail");
  ip->add_option("--ckpt", ip_ckpt, "conditional model checkpoint")->required();
  ip->add_option("--data", ip_data, "trajectory file with head and tail frames")->required();
  ip->add_option("--t-head", ip_head, "observed frames before the gap")->required();
  ip->add_option("--t-tail", ip_tail, "observed frames after the gap")->required();
  ip->add_option("--batch", ip_batch, "sampling batch size");
  ip->add_option("--seed", ip_o.seed, "sampling seed");
  ip->add_option("--out", ip_o.out, "output trajectory file")->required();
  ip->add_flag("--full", ip_full, "stitch head and tail around the generated gap");
  ip->add_flag("--csv", ip_o.csv, "also write a CSV copy");
  ip->callback([&] { cmd_interpolate(ip_o, ip_ckpt, ip_data, ip_head, ip_tail, ip_batch, ip_full); });

  CommonOpts rf_o;
  std::string rf_ckpt, rf_data, rf_draft;
  int64_t rf_tcond = 0;
  int rf_k = 0, rf_batch = 16;
  auto* rf = app.add_subcommand("refine", "Partially re-noise and denoise a draft trajectory");
  rf->add_option("--ckpt", rf_ckpt, "conditional model checkpoint")->required();
  rf->add_option("--data", rf_data, "trajectory file with condition frames")->required();
  rf->add_option("--draft", rf_draft,
                 "draft trajectories to refine (default: constant-velocity extrapolation)");
  rf->add_option("--t-cond", rf_tcond,
                 "condition frames (default: data frames minus model target length)");
  rf->add_option("--k-steps", rf_k, "diffusion steps to apply")->required();
  rf->add_option("--batch", rf_batch, "sampling batch size");
  rf->add_option("--seed", rf_o.seed, "sampling seed");
  rf->add_option("--out", rf_o.out, "output trajectory file")->required();
  rf->add_flag("--csv", rf_o.csv, "also write a CSV copy");
  rf->callback([&] { cmd_refine(rf_o, rf_ckpt, rf_data, rf_draft, rf_tcond, rf_k, rf_batch); });

  CommonOpts cp_o;
  std::string cp_cond, cp_uncond, cp_data, cp_init;
  int cp_segments = 2, cp_batch = 16;
  int64_t cp_window = 0;
  auto* cp = app.add_subcommand("compose", "Chain segments into a long trajectory");
  cp->add_option("--cond-ckpt", cp_cond, "conditional model checkpoint")->required();
  cp->add_option("--uncond-ckpt", cp_uncond, "unconditional model for the first segment");
  cp->add_option("--data", cp_data, "trajectory file supplying graphs and node features");
  cp->add_option("--init-data", cp_init, "trajectories whose first frames seed segment one");
  cp->add_option("--segments", cp_segments, "number of segments");
  cp->add_option("--window", cp_window, "condition frames carried between segments")
      ->required();
  cp->add_option("--batch", cp_batch, "sampling batch size");
  cp->add_option("--seed", cp_o.seed, "sampling seed");
  cp->add_option("--out", cp_o.out, "output trajectory file")->required();
  cp->add_flag("--csv", cp_o.csv, "also write a CSV copy");
  cp->callback([&] {
    cmd_compose(cp_o, cp_cond, cp_uncond, cp_data, cp_init, cp_segments, cp_window, cp_batch);
  });

  CommonOpts ev_o;
  std::string ev_gen, ev_ref;
  int64_t ev_k = 1, ev_offset = -1;
  int ev_bins = 50, ev_steps = 200;
  bool ev_surrogate = false, ev_kv = false;
  auto* ev = app.add_subcommand("evaluate", "Score generated trajectories against references");
  ev->add_option("--gen", ev_gen, "generated trajectory file")->required();
  ev->add_option("--ref", ev_ref, "reference trajectory file")->required();
  ev->add_option("--k", ev_k, "generated samples per reference");
  ev->add_option("--bins", ev_bins, "histogram bins for the marginal score");
  ev->add_option("--ref-offset", ev_offset,
                 "frame offset into references (default: align at the end)");
  ev->add_flag("--surrogate", ev_surrogate, "also train classifier and forecaster scores");
  ev->add_option("--steps", ev_steps, "surrogate training steps");
  ev->add_option("--seed", ev_o.seed, "surrogate training seed");
  ev->add_flag("--kv", ev_kv, "print key=value lines instead of a table");
  ev->callback([&] {
    cmd_evaluate(ev_o, ev_gen, ev_ref, ev_k, ev_bins, ev_offset, ev_surrogate, ev_steps, ev_kv);
  });

  CommonOpts eq_o;
  std::string eq_ckpt, eq_data;
  int eq_motions = 10, eq_count = 4;
  int64_t eq_tcond = 0;
  double eq_tol = 1e-4;
  auto* eq = app.add_subcommand("check-equivariance",
                                "Verify model outputs transform with rigid motions");
  eq->add_option("--ckpt", eq_ckpt, "model checkpoint")->required();
  eq->add_option("--data", eq_data, "trajectory file supplying test inputs")->required();
  eq->add_option("--motions", eq_motions, "random rigid motions to test");
  eq->add_option("--tol", eq_tol, "maximum allowed relative deviation");
  eq->add_option("--t-cond", eq_tcond, "condition frames for conditional checkpoints");
  eq->add_option("--count", eq_count, "trajectories per test batch");
  eq->add_option("--seed", eq_o.seed, "seed for motions and chains");
  eq->callback([&] {
    exit_code = cmd_check_equivariance(eq_o, eq_ckpt, eq_data, eq_motions, eq_tol, eq_tcond,
                                       eq_count);
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}

}  // namespace geotdm

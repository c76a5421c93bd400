#include "nift/harness/bench.hpp"
#include "nift/training.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <random>

using namespace nift;
using json = nlohmann::json;

namespace {

// JSON config files for CLI11: top-level keys are flags of the main app,
// nested objects hold the flags of the subcommand with that name.
class ConfigJson : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (opt->count() > 0) j[name] = opt->as<std::string>();
      else if (default_also && !opt->get_default_str().empty()) j[name] = opt->get_default_str();
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, v] : j.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(v, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (v.is_array())
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(v));
      out.push_back(std::move(item));
    }
  }
};

struct Global {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out;
  bool verbose = false;
};

struct FieldOpts {
  std::string weights;  // learned backend when set
  int order = 5;
  std::size_t dirs = 4000;
  int lattice = 0;

  void add(CLI::App* app) {
    app->add_option("--field", weights, "trained field weights (learned backend); omit for the analytic SCF field")
        ->check(CLI::ExistingFile);
    app->add_option("--order", order, "SCF order (analytic backend)")->check(CLI::Range(0, 20));
    app->add_option("--dirs", dirs, "SCF ray directions (analytic backend)")->check(CLI::PositiveNumber);
    app->add_option("--lattice", lattice, "trilinear cache nodes per axis, 0 evaluates directly (analytic backend)");
  }

  std::shared_ptr<const RegressorWeights> loaded() const {
    if (weights.empty()) return nullptr;
    if (!cache_) cache_ = std::make_shared<RegressorWeights>(load_weights(weights));
    return cache_;
  }

  std::unique_ptr<DescriptorField> make(const Geometry& g) const {
    if (auto w = loaded()) return learned_field(w, object_cloud(g, w->encoder, 0));
    return analytic_field(g, {.scf = {.order = order, .dir_count = dirs}, .lattice = lattice});
  }

 private:
  mutable std::shared_ptr<const RegressorWeights> cache_;
};

void emit(const Global& g, const json& result, const std::string& default_name = "") {
  if (!g.out.empty() && !default_name.empty()) {
    std::filesystem::path p = g.out;
    if (std::filesystem::is_directory(p)) p /= default_name;
    std::ofstream(p) << result.dump(2) << '\n';
    std::cerr << "wrote " << p.string() << '\n';
  } else {
    std::cout << result.dump(2) << '\n';
  }
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec3 parse_point(const std::vector<double>& v) {
  if (v.size() != 3) throw Error("a point needs three coordinates");
  return {v[0], v[1], v[2]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NIFT: interaction templates over neural interaction fields"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.config_formatter(std::make_shared<ConfigJson>());
  app.set_config("--config", "", "JSON config; explicit flags take precedence");
  Global g;
  app.add_option("--seed", g.seed, "master seed (default: random, recorded in the output)");
  app.add_option("--threads", g.threads, "worker threads (default: available parallelism)");
  app.add_option("--out", g.out, "output file or directory");
  app.add_flag("-v,--verbose", g.verbose, "progress log on stderr");

  // scf
  auto* scf = app.add_subcommand("scf", "SCF descriptors of points relative to a mesh");
  std::string scf_mesh;
  std::vector<double> scf_point;
  std::string scf_points;
  ScfConfig scf_cfg;
  scf->add_option("--mesh", scf_mesh, "object mesh (OBJ/PLY)")->required()->check(CLI::ExistingFile);
  scf->add_option("--point", scf_point, "query point x y z")->expected(3);
  scf->add_option("--points", scf_points, "query points file (OBJ/PLY vertices)")->check(CLI::ExistingFile);
  scf->add_option("--order", scf_cfg.order, "expansion order")->check(CLI::Range(0, 20));
  scf->add_option("--dirs", scf_cfg.dir_count, "ray directions")->check(CLI::PositiveNumber);

  // ibs
  auto* ibs = app.add_subcommand("ibs", "interaction bisector surface between two meshes");
  std::string ibs_a, ibs_b;
  IbsConfig ibs_cfg;
  std::size_t ibs_samples = 0;
  ibs->add_option("--anchor", ibs_a, "anchor mesh")->required()->check(CLI::ExistingFile);
  ibs->add_option("--source", ibs_b, "source mesh")->required()->check(CLI::ExistingFile);
  ibs->add_option("--grid", ibs_cfg.grid_res, "grid nodes per axis")->check(CLI::Range(16, 512));
  ibs->add_option("--samples", ibs_samples, "importance-sample this many points (0 keeps all)");

  // train-field
  auto* train = app.add_subcommand("train-field", "train a descriptor regressor on procedural shapes");
  std::vector<std::string> train_kinds = {"mug", "bowl", "bottle", "rack"};
  std::size_t train_objects = 100, train_queries = 256;
  std::string train_task = "scf";
  TrainConfig train_cfg = desk_scale_train_config();
  train->add_option("--kinds", train_kinds, "shape categories")->delimiter(',');
  train->add_option("--objects", train_objects, "procedural objects")->check(CLI::Range(2, 1000000));
  train->add_option("--queries", train_queries, "queries per object")->check(CLI::PositiveNumber);
  train->add_option("--task", train_task, "scf or occupancy")->check(CLI::IsMember({"scf", "occupancy"}));
  train->add_option("--epochs", train_cfg.epochs, "training epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", train_cfg.lr, "initial learning rate")->check(CLI::PositiveNumber);
  train->add_option("--batch", train_cfg.batch, "minibatch size")->check(CLI::PositiveNumber);

  // make-template
  auto* make = app.add_subcommand("make-template", "build an interaction template from demos");
  std::vector<std::string> demo_paths;
  TemplateConfig tmpl_cfg;
  FieldOpts make_field;
  make->add_option("--demo", demo_paths, "demo JSON {anchor, source, anchor_pose}; repeat to aggregate")
      ->required()
      ->check(CLI::ExistingFile);
  make->add_option("--samples", tmpl_cfg.samples, "template points")->check(CLI::Range(32, 1000000));
  make->add_option("--grid", tmpl_cfg.ibs.grid_res, "IBS grid nodes per axis")->check(CLI::Range(16, 512));
  make_field.add(make);

  // imitate
  auto* imitate = app.add_subcommand("imitate", "optimize the anchor pose on a target object");
  std::string imitate_template, imitate_target;
  OptimizeConfig opt_cfg;
  FieldOpts imitate_field;
  imitate->add_option("--template", imitate_template, "template JSON")->required()->check(CLI::ExistingFile);
  imitate->add_option("--target", imitate_target, "target mesh")->required()->check(CLI::ExistingFile);
  imitate->add_option("--restarts", opt_cfg.restarts, "parallel restarts")->check(CLI::PositiveNumber);
  imitate->add_option("--iters", opt_cfg.max_iters, "max iterations per restart")->check(CLI::PositiveNumber);
  imitate->add_option("--lr", opt_cfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  imitate_field.add(imitate);

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "feature-difference heatmap of a query point against a target");
  std::string heat_source, heat_target;
  std::vector<double> heat_point;
  int heat_res = 24;
  FieldOpts heat_field;
  heat->add_option("--source", heat_source, "object of the query point")->required()->check(CLI::ExistingFile);
  heat->add_option("--point", heat_point, "query point x y z")->required()->expected(3);
  heat->add_option("--target", heat_target, "object to scan (default: the source)")->check(CLI::ExistingFile);
  heat->add_option("--res", heat_res, "grid nodes per axis")->check(CLI::Range(2, 256));
  heat_field.add(heat);

  // bench
  auto* bench = app.add_subcommand("bench", "run a benchmark suite");
  std::string suite_path;
  bench->add_option("--suite", suite_path, "suite JSON")->required()->check(CLI::ExistingFile);

  // gen-shapes
  auto* gen = app.add_subcommand("gen-shapes", "write procedural shapes as OBJ");
  std::string gen_kind = "mug";
  int gen_count = 1;
  bool gen_default = false;
  gen->add_option("--kind", gen_kind, "mug, bowl, bottle, rack or gripper-proxy")
      ->check(CLI::IsMember({"mug", "bowl", "bottle", "rack", "gripper", "gripper-proxy"}));
  gen->add_option("--count", gen_count, "number of shapes")->check(CLI::PositiveNumber);
  gen->add_flag("--default-params", gen_default, "use default parameters instead of random ones");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const bool seed_given = app.count("--seed") > 0;
  if (!seed_given) g.seed = std::random_device{}();
  if (g.threads > 0) set_thread_count(g.threads);
  std::ostream* log = g.verbose ? &std::cerr : nullptr;

  try {
    if (scf->parsed()) {
      Points pts;
      if (!scf_point.empty()) pts.push_back(parse_point(scf_point));
      if (!scf_points.empty()) {
        Points more = load_points(scf_points);
        pts.insert(pts.end(), more.begin(), more.end());
      }
      if (pts.empty()) throw CLI::ValidationError("scf needs --point or --points");
      RayAccelerator accel(load_geometry(scf_mesh));
      ScfEvaluator eval(scf_cfg);
      std::vector<json> rows(pts.size());
      parallel_for(pts.size(), [&](std::size_t i) {
        rows[i] = {{"point", {pts[i].x(), pts[i].y(), pts[i].z()}}, {"powers", vec_json(eval(accel, pts[i]).powers)}};
      });
      emit(g, {{"fingerprint", scf_cfg.fingerprint()}, {"descriptors", rows}}, "scf.json");
    } else if (ibs->parsed()) {
      IbsPointSet s = compute_ibs(load_geometry(ibs_a), load_geometry(ibs_b), ibs_cfg);
      if (ibs_samples > 0) s = importance_sample(s, ibs_samples, ibs_cfg.importance, g.seed);
      json summary = {{"points", s.size()},
                      {"truncation_center", {s.truncation.center.x(), s.truncation.center.y(), s.truncation.center.z()}},
                      {"truncation_radius", s.truncation.radius},
                      {"seed", g.seed}};
      if (!g.out.empty()) {
        write_ply(g.out, s.points, {}, {.scalars = {{"d_a", &s.d_a}, {"d_b", &s.d_b}, {"weight", &s.weights}}});
        summary["ply"] = g.out;
      }
      std::cout << summary.dump(2) << '\n';
    } else if (train->parsed()) {
      if (g.out.empty()) throw CLI::ValidationError("train-field needs --out for the weights");
      std::vector<ShapeKind> kinds;
      for (const auto& k : train_kinds) kinds.push_back(shape_kind_from_string(k));
      TrainingSetConfig sc;
      sc.task = train_task == "occupancy" ? FieldTask::occupancy : FieldTask::scf;
      train_cfg.seed = g.seed;
      if (log) *log << "generating " << train_objects << " objects\n";
      TrainingSet set = generate_training_set(category_sampler(kinds), train_objects, train_queries, g.seed, sc);
      RegressorWeights w = train_field(set, train_cfg);
      save_weights(g.out, w);
      json meta = to_json(w.meta);
      meta["seed"] = g.seed;
      meta["weights"] = g.out;
      std::cout << meta.dump(2) << '\n';
    } else if (make->parsed()) {
      std::vector<DemoInteraction> demos;
      for (const auto& p : demo_paths) demos.push_back(load_demo(p));
      std::vector<std::unique_ptr<DescriptorField>> owned;
      std::vector<const DescriptorField*> fields;
      for (const auto& d : demos) {
        owned.push_back(make_field.make(d.source));
        fields.push_back(owned.back().get());
      }
      tmpl_cfg.seed = g.seed;
      InteractionTemplate t = demos.size() == 1 ? build_template(demos[0], *fields[0], tmpl_cfg)
                                                : aggregate_templates(demos, fields, {.base = tmpl_cfg});
      t.config["seed"] = g.seed;
      emit(g, to_json(t), "nit.json");
    } else if (imitate->parsed()) {
      InteractionTemplate t = load_template(imitate_template);
      Geometry target = load_geometry(imitate_target);
      auto field = imitate_field.make(target);
      opt_cfg.seed = g.seed;
      PoseResult r = optimize_pose(t, *field, target, opt_cfg);
      json j = to_json(r);
      j["seed"] = g.seed;
      emit(g, j, "pose.json");
    } else if (heat->parsed()) {
      Geometry source = load_geometry(heat_source);
      Geometry target = heat_target.empty() ? source : load_geometry(heat_target);
      auto fa = heat_field.make(source);
      auto fb = heat_target.empty() ? nullptr : heat_field.make(target);
      const DescriptorField& b = fb ? *fb : *fa;
      std::filesystem::path ply = g.out.empty() ? std::filesystem::path{} : std::filesystem::path(g.out);
      Heatmap h = export_heatmap(*fa, parse_point(heat_point), b, {.box = b.domain(), .res = heat_res}, ply);
      const Vec3 best = h.points[h.argmin()];
      std::cout << json{{"nodes", h.points.size()},
                        {"argmin", {best.x(), best.y(), best.z()}},
                        {"min", h.values[h.argmin()]},
                        {"max", *std::max_element(h.values.begin(), h.values.end())},
                        {"ply", ply.string()}}
                       .dump(2)
                << '\n';
    } else if (bench->parsed()) {
      std::ifstream in(suite_path);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw Error("suite " + suite_path + ": " + e.what());
      }
      if (seed_given) j["seed"] = g.seed;
      SuiteConfig suite = suite_from_json(j, std::filesystem::path(suite_path).parent_path());
      BenchReport r = run_benchmark(suite, log);
      const std::filesystem::path dir = g.out.empty() ? std::filesystem::path("bench_out") : std::filesystem::path(g.out);
      write_report(r, dir);
      json summary = {{"report", (dir / "report.json").string()}, {"csv", (dir / "report.csv").string()}};
      for (const auto& m : suite.methods) summary["aggregate_success"][m] = r.aggregate_success(m);
      std::cout << summary.dump(2) << '\n';
    } else if (gen->parsed()) {
      const std::filesystem::path dir = g.out.empty() ? std::filesystem::path(".") : std::filesystem::path(g.out);
      std::filesystem::create_directories(dir);
      const ShapeKind kind = shape_kind_from_string(gen_kind);
      std::mt19937_64 rng(g.seed);
      json files = json::array();
      for (int i = 0; i < gen_count; ++i) {
        ShapeSpec s = gen_default ? ShapeSpec{.kind = kind} : random_shape_spec(kind, rng);
        const std::filesystem::path p = dir / (to_string(kind) + "_" + std::to_string(i) + ".obj");
        write_obj(p, gen_shape(s));
        files.push_back({{"path", p.string()}, {"params", s.params}});
      }
      std::cout << json{{"seed", g.seed}, {"shapes", files}}.dump(2) << '\n';
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

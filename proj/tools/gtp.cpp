#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gtp/digest.hpp"
#include "gtp/dist.hpp"
#include "gtp/pursuit.hpp"
#include "gtp/selection_report.hpp"
#include "gtp/subspace.hpp"
#include "gtp/synth.hpp"
#include "gtp/trajectory_store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gtp;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_color_mt("gtp");
    l->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    l->set_level(spdlog::level::warn);
    if (const char* env = std::getenv("GTP_LOG_LEVEL")) l->set_level(spdlog::level::from_str(env));
    return l;
  }();
  return log;
}

json digests(const std::vector<fs::path>& inputs) {
  json out = json::object();
  for (const auto& p : inputs) out[p.string()] = sha256_file(p);
  return out;
}

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---- synth ----

struct SynthArgs {
  std::string kind = "sparse";
  Index n = 2048, m = 256, sparsity = 16, timesteps = 1, groups = 3, copies = 5, d = 32, clusters = 4;
  double noise = 0.0;
  std::uint64_t seed = 0;
  fs::path out, truth, train_out, target_out;
};

void add_synth(CLI::App& app, SynthArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("synth", "Generate synthetic designs or trajectories");
  cmd->add_option("--kind", a.kind, "sparse | duplicated | trajectory")
      ->check(CLI::IsMember({"sparse", "duplicated", "trajectory"}));
  cmd->add_option("--n", a.n, "Columns (samples)")->check(CLI::PositiveNumber);
  cmd->add_option("--m", a.m, "Rows (sparse, duplicated)")->check(CLI::PositiveNumber);
  cmd->add_option("--sparsity", a.sparsity, "Planted non-zeros (sparse)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--noise", a.noise, "Noise level relative to ||A w*|| (sparse)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--timesteps", a.timesteps, "Timestep blocks (sparse, duplicated: must divide m; trajectory: T)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--groups", a.groups, "Duplicate groups (duplicated)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--copies", a.copies, "Copies per group (duplicated)")->check(CLI::PositiveNumber);
  cmd->add_option("--d", a.d, "Gradient dimension (trajectory)")->check(CLI::PositiveNumber);
  cmd->add_option("--clusters", a.clusters, "Cluster count (trajectory)")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "Random seed");
  cmd->add_option("--out", a.out, "Design file (sparse, duplicated)");
  cmd->add_option("--truth", a.truth, "Planted weights JSON (sparse, duplicated)");
  cmd->add_option("--train-out", a.train_out, "Train trajectory file (trajectory)");
  cmd->add_option("--target-out", a.target_out, "Target trajectory file (trajectory)");
  cmd->callback([&] {
    run = [&] {
      if (a.kind == "trajectory") {
        if (a.train_out.empty() || a.target_out.empty()) {
          throw ValidationError("--kind trajectory needs --train-out and --target-out");
        }
        const auto t = gen_synthetic_trajectory(a.n, a.timesteps, a.d, a.clusters, a.seed);
        write_trajectory(t.train, a.train_out);
        write_trajectory(t.target, a.target_out);
        logger()->info("wrote {} and {}", a.train_out.string(), a.target_out.string());
        return;
      }
      if (a.out.empty()) throw ValidationError("--kind " + a.kind + " needs --out");
      const auto inst = a.kind == "sparse" ? gen_sparse_instance(a.n, a.m, a.sparsity, a.noise, a.seed)
                                           : gen_duplicated_instance(a.n, a.m, a.groups, a.copies, a.seed);
      write_design(with_timesteps(inst.design, a.timesteps), a.out);
      if (!a.truth.empty()) {
        json j;
        j["kind"] = a.kind;
        j["seed"] = a.seed;
        j["support"] = inst.support;
        std::vector<double> w;
        for (Index i : inst.support) w.push_back(inst.true_weights(i));
        j["support_weights"] = w;
        j["noise_level"] = inst.noise_level;
        j["groups"] = inst.groups;
        write_json(a.truth, j);
      }
    };
  });
}

// ---- fit-subspace / assemble ----

struct FitArgs {
  fs::path target, out;
  Index dim = 0;
  std::string method = "pca_uncentered";
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

void add_fit(CLI::App& app, FitArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("fit-subspace", "Fit one basis per checkpoint from target gradients");
  cmd->add_option("--target", a.target, "Target trajectory file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--dim", a.dim, "Subspace dimension d_s")->required()->check(CLI::PositiveNumber);
  cmd->add_option("--method", a.method, "pca_uncentered | pca_centered | random_projection | identity")
      ->check(CLI::IsMember({"pca_uncentered", "pca_centered", "random_projection", "identity"}));
  cmd->add_option("--seed", a.seed, "Random seed");
  cmd->add_option("--workers", a.workers, "Parallel timestep fits")->check(CLI::PositiveNumber);
  cmd->add_option("--out", a.out, "Basis file")->required();
  cmd->callback([&] {
    run = [&] {
      const auto target = read_trajectory(a.target);
      const auto basis = fit_evolving_subspace(target, a.dim, parse_subspace_method(a.method), a.seed, a.workers);
      for (Index t = 0; t < basis.n_timesteps(); ++t) {
        if (basis.rank_deficient[static_cast<std::size_t>(t)]) {
          logger()->warn("timestep {}: target gradients have rank below d_s = {}; basis was completed", t, a.dim);
        }
      }
      write_basis(basis, a.out);
    };
  });
}

struct AssembleArgs {
  fs::path train, target, basis, out;
  bool normalize = false;
};

void add_assemble(CLI::App& app, AssembleArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("assemble", "Project gradients and build the design system (A, b)");
  cmd->add_option("--train", a.train, "Train trajectory file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--target", a.target, "Target trajectory file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--basis", a.basis, "Basis file")->required()->check(CLI::ExistingFile);
  cmd->add_flag("--normalize-columns", a.normalize, "Scale every column of A to unit norm");
  cmd->add_option("--out", a.out, "Design file")->required();
  cmd->callback([&] {
    run = [&] {
      const auto design =
          assemble_design(read_trajectory(a.train), read_trajectory(a.target), read_basis(a.basis), {a.normalize});
      write_design(design, a.out);
    };
  });
}

// ---- select ----

struct SelectArgs {
  fs::path design, out, csv, plot;
  std::string alg = "gtp";
  Index budget = 0, iters = 10, machines = 0, nnls_max_iter = 0;
  std::vector<std::string> endpoints;
  std::string correlation_mode = "residual", aggregation = "sum";
  double nnls_tol = kDefaultNnlsTol;
  std::uint64_t seed = 0;
  bool early_exit = false;
  unsigned threads = 1;
  long timeout_ms = 60000;
};

json echo_select(const SelectArgs& a) {
  json j = {{"alg", a.alg},
            {"budget", a.budget},
            {"iters", a.iters},
            {"correlation_mode", a.correlation_mode},
            {"nnls_tol", a.nnls_tol},
            {"nnls_max_iter", a.nnls_max_iter},
            {"seed", a.seed},
            {"early_exit", a.early_exit},
            {"threads", a.threads}};
  if (a.alg == "gtp_dist") {
    j["aggregation"] = a.aggregation;
    j["timeout_ms"] = a.timeout_ms;
    if (!a.endpoints.empty()) {
      j["endpoints"] = a.endpoints;
    } else {
      j["machines"] = a.machines;
    }
  }
  return j;
}

void run_select(const SelectArgs& a) {
  const bool dist_run = a.alg == "gtp_dist";
  if (!dist_run && (!a.endpoints.empty() || a.machines != 0)) {
    throw ValidationError("--machines and --endpoints apply only to --alg gtp_dist");
  }
  if (dist_run && !a.endpoints.empty() && a.machines != 0) {
    throw ValidationError("use either --machines (in-process workers) or --endpoints (remote workers), not both");
  }
  if (dist_run && a.endpoints.empty() && a.machines == 0) {
    throw ValidationError("--alg gtp_dist needs --machines or --endpoints");
  }
  if (a.design.empty() && !(dist_run && !a.endpoints.empty())) throw ValidationError("--design is required");

  PursuitConfig cfg;
  cfg.budget = a.budget;
  cfg.iterations = a.iters;
  cfg.correlation_mode = parse_correlation_mode(a.correlation_mode);
  cfg.nnls_tol = a.nnls_tol;
  cfg.nnls_max_iter = a.nnls_max_iter;
  cfg.seed = a.seed;
  cfg.early_exit = a.early_exit;
  cfg.n_threads = a.threads;

  std::vector<fs::path> inputs;
  DesignSystem design;
  if (!a.design.empty()) {
    design = read_design(a.design);
    inputs.push_back(a.design);
  }
  const NnlsOptions nnls{a.nnls_tol, a.nnls_max_iter};
  const auto start = std::chrono::steady_clock::now();
  Selection sel;
  if (a.alg == "gtp") {
    sel = iter_cosamp(design, cfg);
  } else if (a.alg == "topk") {
    sel = top_k_select(design, a.budget, nnls);
  } else if (a.alg == "omp") {
    sel = omp_select(design, a.budget, nnls);
  } else if (a.alg == "random") {
    sel = random_select(design, a.budget, a.seed, nnls);
  } else {
    dist::DistConfig dc{cfg, dist::parse_weight_aggregation(a.aggregation), dist::Millis(a.timeout_ms)};
    if (!a.endpoints.empty()) {
      std::vector<dist::Endpoint> eps;
      for (const auto& e : a.endpoints) eps.push_back(dist::parse_endpoint(e));
      sel = dist::run_coordinator(eps, dc);
    } else {
      sel = dist::dist_cosamp(dist::partition_design(design, a.machines), dc);
    }
  }
  logger()->info("{} selected {} samples in {:.3f} s, residual {:.6g}", a.alg, sel.indices.size(),
                 seconds_since(start), sel.final_residual);
  if (sel.nnls_nonconverged > 0) logger()->warn("{} NNLS solves hit the iteration limit", sel.nnls_nonconverged);
  if (sel.padded_iterations > 0) logger()->info("{} iterations padded the support", sel.padded_iterations);

  json report = selection_to_json(sel, design.column_ids);
  report["run"] = {{"command", "select"}, {"options", echo_select(a)}, {"input_sha256", digests(inputs)}};
  write_json(a.out, report);
  if (!a.csv.empty()) write_text_atomic(a.csv, residual_csv(sel));
  if (!a.plot.empty()) write_text_atomic(a.plot, residual_svg(sel));
}

void add_select(CLI::App& app, SelectArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("select", "Select a weighted subset of columns");
  cmd->add_option("--design", a.design, "Design file")->check(CLI::ExistingFile);
  cmd->add_option("--alg", a.alg, "gtp | gtp_dist | topk | omp | random")
      ->check(CLI::IsMember({"gtp", "gtp_dist", "topk", "omp", "random"}));
  cmd->add_option("--budget", a.budget, "Number of samples M")->required()->check(CLI::PositiveNumber);
  cmd->add_option("--iters", a.iters, "Pursuit iterations K")->check(CLI::PositiveNumber);
  cmd->add_option("--correlation-mode", a.correlation_mode, "residual | target_literal")
      ->check(CLI::IsMember({"residual", "target_literal"}));
  cmd->add_option("--nnls-tol", a.nnls_tol, "NNLS tolerance, relative to ||A^T b||_inf")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--nnls-max-iter", a.nnls_max_iter, "NNLS iteration cap (0: 3k)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", a.seed, "Seed for --alg random");
  cmd->add_flag("--early-exit", a.early_exit, "Stop when the residual change falls below 1e-8 ||b||");
  cmd->add_option("--threads", a.threads, "Threads for the correlation product")->check(CLI::PositiveNumber);
  cmd->add_option("--machines", a.machines, "gtp_dist: in-process workers, one per timestep block")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--endpoints", a.endpoints, "gtp_dist: worker host:port list, in machine order")->delimiter(',');
  cmd->add_option("--aggregation", a.aggregation, "gtp_dist weight gather: sum | mean")
      ->check(CLI::IsMember({"sum", "mean"}));
  cmd->add_option("--timeout-ms", a.timeout_ms, "gtp_dist: per-response timeout")->check(CLI::PositiveNumber);
  cmd->add_option("--out", a.out, "Selection JSON")->required();
  cmd->add_option("--csv", a.csv, "Residual history CSV");
  cmd->add_option("--plot", a.plot, "Residual history SVG plot");
  cmd->callback([&] { run = [&] { run_select(a); }; });
}

// ---- oracle ----

struct OracleArgs {
  fs::path design, out;
  Index budget = 0, iters = 10;
};

void add_oracle(CLI::App& app, OracleArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("oracle", "Compare gtp, top-k and omp with the exhaustive best subset");
  cmd->add_option("--design", a.design, "Design file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--budget", a.budget, "Number of samples M")->required()->check(CLI::PositiveNumber);
  cmd->add_option("--iters", a.iters, "Pursuit iterations K")->check(CLI::PositiveNumber);
  cmd->add_option("--out", a.out, "Comparison JSON")->required();
  cmd->callback([&] {
    run = [&] {
      const auto design = read_design(a.design);
      PursuitConfig cfg;
      cfg.budget = a.budget;
      cfg.iterations = a.iters;
      const auto best = brute_force_best_subset(design, a.budget);
      json j;
      j["best"] = {{"indices", best.indices}, {"residual", best.residual}};
      for (const auto& sel : {iter_cosamp(design, cfg), top_k_select(design, a.budget), omp_select(design, a.budget)}) {
        const double ratio = best.residual > 0 ? sel.final_residual / best.residual
                                               : (sel.final_residual == 0 ? 1.0 : INFINITY);
        j[sel.algorithm] = {{"indices", sel.indices},
                            {"residual", sel.final_residual},
                            {"ratio_to_best", std::isfinite(ratio) ? json(ratio) : json(nullptr)}};
      }
      j["run"] = {{"command", "oracle"},
                  {"options", {{"budget", a.budget}, {"iters", a.iters}}},
                  {"input_sha256", digests({a.design})}};
      write_json(a.out, j);
    };
  });
}

// ---- bench ----

struct BenchArgs {
  Index n = 20000, m = 512, sparsity = 2000, iters = 5;
  double noise = 0.05;
  std::uint64_t seed = 42;
  std::vector<Index> budgets{100, 500, 1000, 2000};
  fs::path out;
};

void add_bench(CLI::App& app, BenchArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("bench", "Time gtp against omp across budgets");
  cmd->add_option("--n", a.n, "Columns")->check(CLI::PositiveNumber);
  cmd->add_option("--m", a.m, "Rows")->check(CLI::PositiveNumber);
  cmd->add_option("--sparsity", a.sparsity, "Planted non-zeros")->check(CLI::NonNegativeNumber);
  cmd->add_option("--noise", a.noise, "Noise level")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", a.seed, "Fixture seed");
  cmd->add_option("--iters", a.iters, "gtp iterations K")->check(CLI::PositiveNumber);
  cmd->add_option("--budgets", a.budgets, "Budgets M")->delimiter(',');
  cmd->add_option("--out", a.out, "Timing JSON");
  cmd->callback([&] {
    run = [&] {
      const auto inst = gen_sparse_instance(a.n, a.m, a.sparsity, a.noise, a.seed);
      json rows = json::array();
      std::cout << "budget  gtp_s     omp_s     ratio   gtp_residual  omp_residual\n";
      for (Index budget : a.budgets) {
        PursuitConfig cfg;
        cfg.budget = budget;
        cfg.iterations = a.iters;
        auto t0 = std::chrono::steady_clock::now();
        const auto g = iter_cosamp(inst.design, cfg);
        const double gs = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
        const auto o = omp_select(inst.design, budget);
        const double os = seconds_since(t0);
        std::printf("%-7ld %-9.3f %-9.3f %-7.3f %-13.6g %-13.6g\n", static_cast<long>(budget), gs, os, gs / os,
                    g.final_residual, o.final_residual);
        std::fflush(stdout);
        rows.push_back({{"budget", budget}, {"gtp_seconds", gs}, {"omp_seconds", os}, {"ratio", gs / os},
                        {"gtp_residual", g.final_residual}, {"omp_residual", o.final_residual}});
      }
      if (!a.out.empty()) {
        write_json(a.out, {{"rows", rows},
                           {"run", {{"command", "bench"},
                                    {"options", {{"n", a.n}, {"m", a.m}, {"sparsity", a.sparsity},
                                                 {"noise", a.noise}, {"seed", a.seed}, {"iters", a.iters},
                                                 {"budgets", a.budgets}}}}}});
      }
    };
  });
}

// ---- partition / worker ----

struct PartitionArgs {
  fs::path design, out_dir;
  Index machines = 1;
};

void add_partition(CLI::App& app, PartitionArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("partition", "Split a design into per-machine shard files");
  cmd->add_option("--design", a.design, "Design file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--machines", a.machines, "Number of machines")->required()->check(CLI::PositiveNumber);
  cmd->add_option("--out-dir", a.out_dir, "Directory for shard-<i>.bin")->required();
  cmd->callback([&] {
    run = [&] {
      const auto shards = dist::partition_design(read_design(a.design), a.machines);
      fs::create_directories(a.out_dir);
      for (const auto& s : shards) {
        const auto path = a.out_dir / ("shard-" + std::to_string(s.assignment.machine_id) + ".bin");
        dist::write_shard(s, path);
        std::cout << path.string() << " timesteps [" << s.assignment.timestep_begin << ", "
                  << s.assignment.timestep_end << ")\n";
      }
    };
  });
}

struct WorkerArgs {
  std::string listen;
  fs::path shard;
  int fail_after = -1;
};

void add_worker(CLI::App& app, WorkerArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("worker", "Serve one shard to a gtp_dist coordinator");
  cmd->add_option("--listen", a.listen, "host:port to listen on (port 0 picks one)")->required();
  cmd->add_option("--shard", a.shard, "Shard file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--fail-after", a.fail_after, "Drop the connection after this many requests (fault testing)");
  cmd->callback([&] {
    run = [&] {
      const auto shard = dist::read_shard(a.shard);
      dist::WorkerOptions opts;
      if (a.fail_after >= 0) opts.fail_after_requests = a.fail_after;
      dist::run_worker(dist::parse_endpoint(a.listen), shard, opts, [&](std::uint16_t port) {
        std::cout << "listening " << port << std::endl;
        logger()->info("machine {} listening on port {}", shard.assignment.machine_id, port);
      });
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient trajectory pursuit: data selection by matching gradient trajectories"};
  app.require_subcommand(1);
  std::function<void()> run;

  SynthArgs synth;
  FitArgs fit;
  AssembleArgs assemble;
  SelectArgs select;
  OracleArgs oracle;
  BenchArgs bench;
  PartitionArgs partition;
  WorkerArgs worker;
  add_synth(app, synth, run);
  add_fit(app, fit, run);
  add_assemble(app, assemble, run);
  add_select(app, select, run);
  add_oracle(app, oracle, run);
  add_bench(app, bench, run);
  add_partition(app, partition, run);
  add_worker(app, worker, run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    run();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const dist::DistError& e) {
    std::cerr << "distributed run failed: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

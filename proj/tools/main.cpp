#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tio/estimator.hpp"
#include "tio/gru.hpp"
#include "tio/simulator.hpp"

namespace {

using namespace tio;

TrajectoryKind parseKind(const std::string& s) {
  if (s == "box") return TrajectoryKind::Box;
  if (s == "sweep") return TrajectoryKind::StraightSweep;
  if (s == "hover") return TrajectoryKind::Hover;
  if (s == "slalom") return TrajectoryKind::Slalom;
  throw CLI::ValidationError("unknown trajectory kind: " + s);
}

BaroMode parseBaroMode(const std::string& s) {
  if (s == "off") return BaroMode::Off;
  if (s == "filtered") return BaroMode::Filtered;
  if (s == "poly") return BaroMode::Poly;
  if (s == "mlp") return BaroMode::Mlp;
  if (s == "gru") return BaroMode::Gru;
  throw CLI::ValidationError("unknown baro mode: " + s);
}

void writeTrack(const std::string& path, const std::vector<TrackPoint>& track) {
  std::ofstream f(path);
  f.precision(9);
  f << "t,x,y,z,vx,vy,vz,yaw\n";
  for (const auto& p : track)
    f << p.t << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ','
      << p.velocity.x() << ',' << p.velocity.y() << ',' << p.velocity.z() << ',' << p.yaw
      << '\n';
}

int runSimulate(const std::string& kind, uint64_t seed, double speed, double altitude,
                double path_length, const std::string& out) {
  TrajectorySpec spec;
  spec.kind = parseKind(kind);
  spec.cruise_speed = speed;
  spec.altitude = altitude;
  spec.path_length = path_length;
  SensorSuiteConfig cfg;
  cfg.seed = seed;
  const SensorLog log = simulate(spec, cfg);
  saveSensorLog(out, log);
  // Companion training corpus for the pressure-error compensator.
  const auto truth = generateTruth(spec, cfg.imu_rate);
  saveBaroLog(out + "/baro_train.txt", simulateBaroLog(truth, cfg));
  std::cout << "wrote " << log.imu.size() << " imu / " << log.frames.size() << " frames to "
            << out << "\n";
  return 0;
}

int runReplayCmd(const std::string& log_dir, const std::string& out,
                 const EstimatorToggles& toggles, const std::string& camera,
                 const std::string& gru_path) {
  SensorLog log;
  try {
    log = loadSensorLog(log_dir);
  } catch (const std::exception& e) {
    std::cerr << "malformed log: " << e.what() << "\n";
    return 2;
  }
  ReplayConfig cfg;
  cfg.toggles = toggles;
  cfg.camera = camera == "raster" ? CameraMode::Raster : CameraMode::Bearings;
  GruCompensator gru;
  if (!gru_path.empty()) {
    gru = GruCompensator::load(gru_path);
    cfg.gru = &gru;
  }
  ReplayResult res;
  try {
    res = runReplay(log, cfg);
  } catch (const EstimatorDiverged& e) {
    std::cerr << "estimator diverged: " << e.what() << "\n";
    return 3;
  }
  const MetricsReport rep = computeMetrics(res.track, log.truth);
  std::cout << formatMetrics(rep, log.config.seed);
  if (!out.empty()) {
    writeTrack(out + ".track.csv", res.track);
    std::ofstream f(out + ".metrics.txt");
    f << formatMetrics(rep, log.config.seed);
    std::ofstream ft(out + ".timing.txt");  // non-deterministic, kept separate
    ft << "ms_preprocess " << res.ms_preprocess << "\nms_frontend " << res.ms_frontend
       << "\nms_optimize " << res.ms_optimize << "\n";
  }
  return 0;
}

int runSweep(const std::string& log_dir, const std::string& out) {
  SensorLog log;
  try {
    log = loadSensorLog(log_dir);
  } catch (const std::exception& e) {
    std::cerr << "malformed log: " << e.what() << "\n";
    return 2;
  }
  struct Case {
    const char* name;
    EstimatorToggles t;
  };
  std::vector<Case> cases;
  cases.push_back({"full", {}});
  {
    EstimatorToggles t;
    t.iir = false;
    cases.push_back({"no-iir", t});
  }
  {
    EstimatorToggles t;
    t.triangulation_filter = false;
    cases.push_back({"no-triangulation-filter", t});
  }
  {
    EstimatorToggles t;
    t.lrf_prior = false;
    cases.push_back({"no-lrf-prior", t});
  }
  {
    EstimatorToggles t;
    t.baro = BaroMode::Off;
    cases.push_back({"baro-off", t});
  }
  std::ofstream f(out);
  for (const auto& c : cases) {
    ReplayConfig cfg;
    cfg.toggles = c.t;
    try {
      const ReplayResult res = runReplay(log, cfg);
      const MetricsReport rep = computeMetrics(res.track, log.truth);
      f << c.name << ' ' << formatMetrics(rep, log.config.seed);
      std::cout << c.name << ' ' << formatMetrics(rep, log.config.seed);
    } catch (const EstimatorDiverged&) {
      f << c.name << " diverged\n";
    }
  }
  return 0;
}

int runBaroTrain(const std::string& data_path, const std::string& out, int epochs, int seq_len,
                 int batch, int hidden, int layers, bool ablate) {
  BaroLog raw;
  try {
    raw = loadBaroLog(data_path);
  } catch (const std::exception& e) {
    std::cerr << "malformed baro log: " << e.what() << "\n";
    return 2;
  }
  const double rate = raw.size() > 1 ? 1.0 / (raw[1].t - raw[0].t) : 30.0;
  const BaroSequence seq = buildSequence(raw, rate);
  // 70/30 contiguous split.
  const int n = int(seq.target.size());
  const int ntr = int(0.7 * n);
  BaroSequence train{seq.features.topRows(ntr), seq.target.head(ntr)};
  BaroSequence val{seq.features.bottomRows(n - ntr), seq.target.tail(n - ntr)};

  GruTrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seq_len = seq_len;
  cfg.batch = batch;
  GruCompensator gru(11, hidden, layers);
  gru.initRandom(cfg.seed);
  const GruTrainReport rep = trainGru(gru, {train}, {val}, cfg);
  std::cout << "gru params " << gru.parameterCount() << " val_rmse " << rep.validation_rmse
            << "\n";

  const PolyBaroModel poly = fitPolyBaro({train});
  std::cout << "poly val_rmse " << polyRmse(poly, {val})
            << (poly.degenerate ? " (degenerate design, ridge-regularized)" : "") << "\n";
  MlpBaroModel mlp;
  mlp.initRandom(3);
  const double mlp_rmse = trainMlpBaro(mlp, {train}, {val}, MlpTrainConfig{});
  std::cout << "mlp val_rmse " << mlp_rmse << "\n";

  if (!out.empty()) gru.save(out);
  if (ablate) {
    const auto curve = dataAblation({train}, {val}, {0.1, 0.3, 0.5, 0.7, 0.9}, 10, cfg);
    for (const auto& pt : curve)
      std::cout << "ablate " << pt.fraction << " mean " << pt.mean_rmse << " std "
                << pt.std_rmse << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thermal-inertial odometry toolkit"};
  app.require_subcommand(1);

  std::string kind = "box", out_dir = "simlog", out = "", log_dir = "simlog";
  std::string camera = "bearings", gru_path = "", baro_mode = "filtered";
  std::string est_file, truth_file, data_path;
  uint64_t seed = 1;
  double speed = 30.0, altitude = 50.0, path_length = 3100.0;
  int epochs = 7, seq_len = 256, batch = 16, hidden = 128, layers = 3;
  bool no_iir = false, no_grad = false, no_orb = false, no_tri = false, no_lrf = false;
  bool ablate = false;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic flight log");
  sim->add_option("--kind", kind, "box | sweep | hover | slalom");
  sim->add_option("--seed", seed);
  sim->add_option("--speed", speed);
  sim->add_option("--altitude", altitude);
  sim->add_option("--path-length", path_length);
  sim->add_option("--out", out_dir);

  auto* rep = app.add_subcommand("replay", "run the estimator over a log");
  rep->add_option("--log", log_dir);
  rep->add_option("--out", out);
  rep->add_option("--camera", camera, "bearings | raster");
  rep->add_option("--baro", baro_mode, "off | filtered | poly | mlp | gru");
  rep->add_option("--gru-model", gru_path);
  rep->add_flag("--no-iir", no_iir);
  rep->add_flag("--no-gradient-gate", no_grad);
  rep->add_flag("--no-orb-check", no_orb);
  rep->add_flag("--no-triangulation-filter", no_tri);
  rep->add_flag("--no-lrf-prior", no_lrf);

  auto* met = app.add_subcommand("metrics", "compare a track csv against a truth file");
  met->add_option("--est", est_file)->required();
  met->add_option("--truth", truth_file)->required();

  auto* swp = app.add_subcommand("sweep", "toggle-ablation sweep over one log");
  swp->add_option("--log", log_dir);
  swp->add_option("--out", out)->required();

  auto* bt = app.add_subcommand("baro-train", "train the pressure-error models");
  bt->add_option("--data", data_path)->required();
  bt->add_option("--out", out);
  bt->add_option("--epochs", epochs);
  bt->add_option("--seq-len", seq_len);
  bt->add_option("--batch", batch);
  bt->add_option("--hidden", hidden);
  bt->add_option("--layers", layers);
  bt->add_flag("--ablate", ablate);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return runSimulate(kind, seed, speed, altitude, path_length, out_dir);
    if (rep->parsed()) {
      EstimatorToggles t;
      t.iir = !no_iir;
      t.gradient_gate = !no_grad;
      t.orb_check = !no_orb;
      t.triangulation_filter = !no_tri;
      t.lrf_prior = !no_lrf;
      t.baro = parseBaroMode(baro_mode);
      return runReplayCmd(log_dir, out, t, camera, gru_path);
    }
    if (met->parsed()) {
      std::vector<TrackPoint> est;
      {
        std::ifstream f(est_file);
        if (!f) throw std::runtime_error("cannot open " + est_file);
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) {
          TrackPoint p;
          if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &p.t,
                          &p.position.x(), &p.position.y(), &p.position.z(), &p.velocity.x(),
                          &p.velocity.y(), &p.velocity.z(), &p.yaw) != 8)
            throw std::runtime_error("malformed track line: " + line);
          est.push_back(p);
        }
      }
      std::vector<TruthSample> truth;
      {
        std::ifstream f(truth_file);
        if (!f) throw std::runtime_error("cannot open " + truth_file);
        std::string line;
        while (std::getline(f, line)) {
          TruthSample ts;
          std::istringstream ss(line);
          ss >> ts.t >> ts.position.x() >> ts.position.y() >> ts.position.z() >>
              ts.velocity.x() >> ts.velocity.y() >> ts.velocity.z() >> ts.yaw >> ts.yaw_rate;
          if (ss.fail()) throw std::runtime_error("malformed truth line: " + line);
          truth.push_back(ts);
        }
      }
      std::cout << formatMetrics(computeMetrics(est, truth), 0);
      return 0;
    }
    if (swp->parsed()) return runSweep(log_dir, out);
    if (bt->parsed())
      return runBaroTrain(data_path, out, epochs, seq_len, batch, hidden, layers, ablate);
  } catch (const EstimatorDiverged& e) {
    std::cerr << "estimator diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

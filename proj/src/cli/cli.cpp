#include "ndk/cli/cli.hpp"

#include "ndk/cli/config.hpp"
#include "ndk/cli/manifest.hpp"
#include "ndk/ct/metaimage.hpp"
#include "ndk/ct/phantom.hpp"
#include "ndk/ct/preprocess.hpp"
#include "ndk/detector/inference.hpp"
#include "ndk/detector/train.hpp"
#include "ndk/eval/froc.hpp"
#include "ndk/gradcheck.hpp"
#include "ndk/lhi/hs2.hpp"
#include "ndk/pretext/pretext.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace ndk::cli {

namespace fs = std::filesystem;

namespace {

/// Missing or malformed input data (exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Run {
  const Config& config;
  fs::path dir;
  RunManifest& manifest;
  std::ostream& out;
  std::ostream& err;
};

struct Command {
  std::string name;
  std::string summary;
  std::vector<KeySpec> keys;
  bool seeded = false;
  std::function<void(Run&)> body;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string required(const Config& c, const std::string& key) {
  const std::string v = c.get_string(key);
  if (v.empty()) throw UsageError("config key '" + key + "' is required");
  return v;
}

int positive_int(const Config& c, const std::string& key, std::int64_t min = 1) {
  const std::int64_t v = c.get_int(key);
  if (v < min || v > std::numeric_limits<int>::max()) {
    throw UsageError("config key '" + key + "' must be at least " + std::to_string(min) + ", got " + std::to_string(v));
  }
  return static_cast<int>(v);
}

std::vector<int> int_list(const Config& c, const std::string& key) {
  std::vector<int> out;
  for (const auto v : c.get_int_list(key)) out.push_back(static_cast<int>(v));
  return out;
}

fs::path existing(const Config& c, const std::string& key) {
  const fs::path p = required(c, key);
  if (!fs::exists(p)) throw DataError(key + ": " + p.string() + " does not exist");
  return p;
}

std::vector<ct::NormalizedVolume> load_dataset(const fs::path& dir) {
  const fs::path gray = dir / "gray";
  if (!fs::is_directory(gray)) throw DataError(dir.string() + " has no gray/ directory (run preprocess first)");
  std::vector<fs::path> headers;
  for (const auto& e : fs::directory_iterator(gray))
    if (e.path().extension() == ".mhd") headers.push_back(e.path());
  std::sort(headers.begin(), headers.end());
  if (headers.empty()) throw DataError(gray.string() + " holds no .mhd volumes");
  std::vector<ct::NormalizedVolume> out;
  for (const auto& h : headers) {
    ct::NormalizedVolume v{h.stem().string(), ct::read_metaimage<float>(h), std::nullopt};
    const fs::path mask = dir / "mask" / h.filename();
    if (fs::exists(mask)) v.mask = ct::read_metaimage<std::uint8_t>(mask);
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string series_text(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += id + "\n";
  return s;
}

const ct::NormalizedVolume& find_volume(const std::map<std::string, const ct::NormalizedVolume*>& index,
                                        const std::string& id) {
  const auto it = index.find(id);
  if (it == index.end()) throw DataError("no volume for series " + id);
  return *it->second;
}

std::map<std::string, const ct::NormalizedVolume*> index_of(const std::vector<ct::NormalizedVolume>& data) {
  std::map<std::string, const ct::NormalizedVolume*> m;
  for (const auto& v : data) m[v.series_id] = &v;
  return m;
}

// ---- synth ----------------------------------------------------------------

void run_synth(Run& r) {
  const Config& c = r.config;
  const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const int count = positive_int(c, "count");
  const int tissue = positive_int(c, "tissue_per_scan", 0);
  const std::string prefix = required(c, "prefix");
  std::vector<ct::NoduleAnnotation> annotations;
  std::vector<ct::Candidate> negatives;
  std::vector<std::string> ids;
  for (int i = 0; i < count; ++i) {
    ct::PhantomConfig pc;
    const Index e = positive_int(c, "extent", 16);
    pc.extent = {e, e, e};
    pc.nodule_count = positive_int(c, "nodules", 0);
    pc.diameter_min = c.get_double("diameter_min");
    pc.diameter_max = c.get_double("diameter_max");
    pc.vessel_count = positive_int(c, "vessels", 0);
    pc.noise_sigma = c.get_double("noise_sigma");
    pc.background = c.get_double("background");
    pc.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    try {
      pc.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("phantom settings: ") + e.what());
    }
    std::ostringstream id;
    id << prefix << '_' << std::setw(3) << std::setfill('0') << i;
    const ct::Phantom ph = ct::generate_phantom(pc, id.str());
    const ct::CtScan scan = ct::phantom_to_ct(ph.volume);
    const fs::path scan_path = fs::path("scans") / (id.str() + ".mhd"), mask_path = fs::path("masks") / (id.str() + ".mhd");
    fs::create_directories(r.dir / "scans");
    fs::create_directories(r.dir / "masks");
    ct::write_metaimage(r.dir / scan_path, scan.hu);
    ct::write_metaimage(r.dir / mask_path, *ph.volume.mask);
    for (const auto& p : {scan_path, mask_path}) {
      r.manifest.add_output(p);
      r.manifest.add_output(fs::path(p).replace_extension(".raw"));
    }
    annotations.insert(annotations.end(), ph.nodules.begin(), ph.nodules.end());
    std::mt19937_64 rng(derive_seed(pc.seed, 1));
    for (auto& [cand, label] : lhi::phantom_candidates(ph, pc, tissue, rng)) {
      if (label == 0) negatives.push_back(cand);
    }
    ids.push_back(id.str());
    r.err << "synth " << id.str() << ": " << ph.nodules.size() << " nodules\n";
  }
  ct::write_annotations(r.dir / "annotations.csv", annotations);
  ct::write_candidates(r.dir / "tissue.csv", negatives);
  write_text(r.dir / "series.txt", series_text(ids));
  for (const char* f : {"annotations.csv", "tissue.csv", "series.txt"}) r.manifest.add_output(f);
  r.out << "wrote " << count << " phantom scans with " << annotations.size() << " nodules to " << r.dir.string() << "\n";
}

// ---- preprocess -----------------------------------------------------------

void run_preprocess(Run& r) {
  const Config& c = r.config;
  const fs::path scans = existing(c, "scans");
  const std::string masks = c.get_string("masks");
  std::vector<fs::path> headers;
  for (const auto& e : fs::directory_iterator(scans))
    if (e.path().extension() == ".mhd") headers.push_back(e.path());
  std::sort(headers.begin(), headers.end());
  if (headers.empty()) throw DataError(scans.string() + " holds no .mhd scans");
  std::vector<std::string> ids;
  for (const auto& h : headers) {
    const ct::CtScan scan = ct::read_ct_scan(h);
    std::optional<ct::Volume<std::uint8_t>> mask;
    if (!masks.empty()) {
      const fs::path m = fs::path(masks) / h.filename();
      if (!fs::exists(m)) throw DataError("no lung mask " + m.string() + " for " + h.string());
      mask = ct::read_metaimage<std::uint8_t>(m);
    }
    const ct::NormalizedVolume v = ct::preprocess(scan, mask ? &*mask : nullptr);
    const fs::path gray = fs::path("gray") / (v.series_id + ".mhd");
    fs::create_directories(r.dir / "gray");
    ct::write_metaimage(r.dir / gray, v.gray);
    r.manifest.add_output(gray);
    r.manifest.add_output(fs::path(gray).replace_extension(".raw"));
    if (v.mask) {
      const fs::path mp = fs::path("mask") / (v.series_id + ".mhd");
      fs::create_directories(r.dir / "mask");
      ct::write_metaimage(r.dir / mp, *v.mask);
      r.manifest.add_output(mp);
      r.manifest.add_output(fs::path(mp).replace_extension(".raw"));
    }
    ids.push_back(v.series_id);
    r.err << "preprocess " << v.series_id << ": " << ct::to_string(v.gray.extent) << "\n";
  }
  write_text(r.dir / "series.txt", series_text(ids));
  r.manifest.add_output("series.txt");
  r.out << "preprocessed " << ids.size() << " scans into " << r.dir.string() << "\n";
}

// ---- pretext --------------------------------------------------------------

det::BackboneConfig backbone_from(const Config& c, Index extent) {
  const double width = c.get_double("width");
  if (!(width > 0)) throw UsageError("config key 'width' must be positive");
  det::BackboneConfig b = det::BackboneConfig{}.scaled(width);
  b.blocks_per_stage = positive_int(c, "blocks");
  b.input_extent = extent;
  return b;
}

SgdConfig sgd_from(const Config& c) {
  return {c.get_double("lr"), c.get_double("momentum"), c.get_double("weight_decay")};
}

void run_pretext(Run& r) {
  const Config& c = r.config;
  const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const auto data = load_dataset(existing(c, "data"));
  const Index tile = positive_int(c, "tile", 16);
  pretext::PretextConfig pc;
  pc.backbone = backbone_from(c, tile);
  pc.hidden = positive_int(c, "hidden");
  pc.epochs = positive_int(c, "epochs");
  pc.batch = positive_int(c, "batch", 2);
  pc.sgd = sgd_from(c);
  pc.milestones = int_list(c, "milestones");
  pc.gamma = c.get_double("gamma");
  pc.clip_norm = c.get_double("clip_norm");
  pc.seed = derive_seed(seed, 2);
  try {
    pc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const double holdout = c.get_double("holdout");
  if (holdout < 0 || holdout >= 1) throw UsageError("config key 'holdout' must lie in [0, 1)");
  const auto n_held = static_cast<std::size_t>(std::lround(holdout * static_cast<double>(data.size())));
  if (n_held >= data.size()) throw DataError("holdout leaves no training scans");

  std::mt19937_64 rng(derive_seed(seed, 1));
  const int per_scan = positive_int(c, "tiles_per_scan");
  std::vector<ct::Volume<float>> train, held;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto tiles = pretext::sample_pretext_tiles(data[i], per_scan, tile, rng);
    auto& dst = i < data.size() - n_held ? train : held;
    dst.insert(dst.end(), tiles.begin(), tiles.end());
  }
  pretext::PretextModel<float> model(pc.backbone, pc.hidden, 4, derive_seed(seed, 0));
  std::string log = "epoch,lr,loss,accuracy\n";
  pretext::train_pretext(model, train, pc, [&](const pretext::PretextEpochReport& e) {
    log += std::to_string(e.epoch) + "," + ct::format_double(e.lr) + "," + ct::format_double(e.mean_loss) + "," +
           ct::format_double(e.accuracy) + "\n";
    r.err << "pretext epoch " << e.epoch << " loss " << e.mean_loss << " accuracy " << e.accuracy << "\n";
  });
  const Checkpoint full = state_dict(model);
  full.save(r.dir / "pretext.ckpt");
  pretext::export_backbone(full, pc.backbone).save(r.dir / "backbone.ckpt");
  write_text(r.dir / "log.csv", log);
  for (const char* f : {"pretext.ckpt", "backbone.ckpt", "log.csv"}) r.manifest.add_output(f);
  const double train_acc = pretext::pretext_accuracy(model, train);
  r.manifest.set_value("train_accuracy", ct::format_double(train_acc));
  r.out << "rotation accuracy: train " << train_acc;
  if (!held.empty()) {
    const double acc = pretext::pretext_accuracy(model, held);
    r.manifest.set_value("heldout_accuracy", ct::format_double(acc));
    r.out << ", held-out " << acc << " (" << held.size() << " tiles from " << n_held << " scans)";
  }
  r.out << "\n";
}

// ---- train ----------------------------------------------------------------

struct ModelSpec {
  double width = 0.125;
  int blocks = 1;
  Index tile = 64;
  Index overlap = 16;
  bool dense = true;
};

det::DetectorConfig detector_config(const ModelSpec& m) {
  det::DetectorConfig cfg = det::DetectorConfig::with_width(m.width);
  cfg.backbone.blocks_per_stage = m.blocks;
  cfg.backbone.input_extent = m.tile;
  cfg.tile = m.tile;
  cfg.levels = det::default_anchor_levels(m.tile);
  cfg.overlap = m.overlap;
  cfg.dense_fusion = m.dense;
  cfg.validate();
  return cfg;
}

void write_model_spec(const fs::path& path, const ModelSpec& m) {
  nlohmann::ordered_json j;
  j["width"] = m.width;
  j["blocks"] = m.blocks;
  j["tile"] = m.tile;
  j["overlap"] = m.overlap;
  j["dense_fusion"] = m.dense;
  write_text(path, j.dump(2) + "\n");
}

ModelSpec read_model_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return {j.at("width").get<double>(), j.at("blocks").get<int>(), j.at("tile").get<Index>(), j.at("overlap").get<Index>(),
            j.at("dense_fusion").get<bool>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void run_train(Run& r) {
  const Config& c = r.config;
  const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
  ModelSpec spec;
  spec.width = c.get_double("width");
  if (!(spec.width > 0)) throw UsageError("config key 'width' must be positive");
  spec.blocks = positive_int(c, "blocks");
  spec.tile = positive_int(c, "tile", 16);
  spec.overlap = positive_int(c, "overlap", 0);
  spec.dense = c.get_bool("dense_fusion");
  det::DetectorConfig cfg;
  try {
    cfg = detector_config(spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  det::DetectorTrainConfig tc;
  tc.epochs = positive_int(c, "epochs");
  tc.accumulate = positive_int(c, "accumulate");
  tc.sgd = sgd_from(c);
  tc.milestones = int_list(c, "milestones");
  tc.gamma = c.get_double("gamma");
  tc.clip_norm = c.get_double("clip_norm");
  tc.augment = c.get_bool("augment");
  tc.seed = derive_seed(seed, 1);

  const auto data = load_dataset(existing(c, "data"));
  const fs::path ann_path = existing(c, "annotations");
  const auto annotations = ct::read_annotations(ann_path);
  r.manifest.add_input("annotations", ann_path);
  std::vector<det::DetectorSample> samples;
  std::size_t nodules = 0;
  for (const auto& v : data) {
    det::DetectorSample s{ct::masked_gray(v), {}};
    for (const auto& a : annotations)
      if (a.series_id == v.series_id) s.nodules.push_back(a);
    nodules += s.nodules.size();
    samples.push_back(std::move(s));
  }
  det::Detector<float> model(cfg, derive_seed(seed, 0));
  if (const std::string init = c.get_string("init"); !init.empty()) {
    if (!fs::exists(init)) throw DataError("init: " + init + " does not exist");
    const Checkpoint ck = Checkpoint::load(init);
    const std::size_t loaded = load_state_dict(model, ck, LoadMode::Partial);
    if (loaded != ck.size()) {
      throw CheckpointError("init checkpoint " + init + ": only " + std::to_string(loaded) + " of " +
                            std::to_string(ck.size()) + " tensors match the detector");
    }
    r.manifest.add_input("init", init);
    r.err << "initialised " << loaded << " tensors from " << init << "\n";
  }
  r.err << "training on " << samples.size() << " scans with " << nodules << " nodules\n";
  std::string log = "epoch,lr,loss,classification,regression\n";
  det::train_detector(model, samples, tc, [&](const det::EpochReport& e) {
    log += std::to_string(e.epoch) + "," + ct::format_double(e.lr) + "," + ct::format_double(e.mean_loss) + "," +
           ct::format_double(e.mean_classification) + "," + ct::format_double(e.mean_regression) + "\n";
    r.err << "train epoch " << e.epoch << " loss " << e.mean_loss << " (cls " << e.mean_classification << ", reg "
          << e.mean_regression << ")\n";
  });
  state_dict(model).save(r.dir / "detector.ckpt");
  write_model_spec(r.dir / "model.json", spec);
  write_text(r.dir / "log.csv", log);
  for (const char* f : {"detector.ckpt", "model.json", "log.csv"}) r.manifest.add_output(f);
  r.out << "trained detector for " << tc.epochs << " epochs on " << samples.size() << " scans\n";
}

// ---- detect ---------------------------------------------------------------

void run_detect(Run& r) {
  const Config& c = r.config;
  const fs::path model_dir = existing(c, "model");
  det::DetectorConfig cfg = detector_config(read_model_spec(model_dir / "model.json"));
  cfg.score_threshold = c.get_double("score_threshold");
  cfg.nms_iou = c.get_double("nms_iou");
  cfg.pre_nms_top_k = positive_int(c, "top_k", 0);
  const Checkpoint ck = Checkpoint::load(model_dir / "detector.ckpt");
  r.manifest.add_input("detector.ckpt", model_dir / "detector.ckpt");
  det::Detector<float> model(cfg, 0);
  load_state_dict(model, ck, LoadMode::Strict);
  const auto scorer = det::model_scorer(model);
  std::vector<ct::Candidate> all;
  for (const auto& v : load_dataset(existing(c, "data"))) {
    const auto found = det::detect_volume(v, scorer, cfg);
    r.err << "detect " << v.series_id << ": " << found.size() << " candidates\n";
    all.insert(all.end(), found.begin(), found.end());
  }
  ct::write_candidates(r.dir / "candidates.csv", all);
  r.manifest.add_output("candidates.csv");
  r.out << "wrote " << all.size() << " candidates\n";
}

// ---- lhi ------------------------------------------------------------------

lhi::LhiParams lhi_from(const Config& c) {
  lhi::LhiParams p{positive_int(c, "tau"), c.get_double("threshold")};
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return p;
}

void run_lhi(Run& r) {
  const Config& c = r.config;
  const lhi::LhiParams params = lhi_from(c);
  const int depth = positive_int(c, "depth", 2);
  const int limit = positive_int(c, "limit", 0);
  const auto data = load_dataset(existing(c, "data"));
  const auto index = index_of(data);
  const fs::path cand_path = existing(c, "candidates");
  const auto candidates = ct::read_candidates(cand_path);
  r.manifest.add_input("candidates", cand_path);
  std::map<std::string, ct::Volume<float>> gray;
  std::string listing = "file,seriesuid,coordX,coordY,coordZ,diameter_mm,probability\n";
  std::map<std::string, int> per_series;
  int written = 0;
  for (const auto& cand : candidates) {
    if (limit > 0 && written == limit) break;
    if (!gray.contains(cand.series_id)) gray.emplace(cand.series_id, ct::masked_gray(find_volume(index, cand.series_id)));
    const auto stack = lhi::extract_patch_stack(gray.at(cand.series_id), cand, depth);
    const fs::path file = fs::path("lhi") / (cand.series_id + "_" + std::to_string(per_series[cand.series_id]++) + ".pgm");
    fs::create_directories(r.dir / "lhi");
    lhi::write_pgm(r.dir / file, lhi::compute_lhi(stack.slices, params), params.tau);
    r.manifest.add_output(file);
    listing += file.generic_string() + "," + cand.series_id + "," + ct::format_double(cand.center.x()) + "," +
               ct::format_double(cand.center.y()) + "," + ct::format_double(cand.center.z()) + "," +
               ct::format_double(cand.diameter) + "," + ct::format_double(cand.score) + "\n";
    ++written;
  }
  write_text(r.dir / "index.csv", listing);
  r.manifest.add_output("index.csv");
  r.out << "wrote " << written << " location history images\n";
}

// ---- train-hs2 ------------------------------------------------------------

void run_train_hs2(Run& r) {
  const Config& c = r.config;
  const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const lhi::LhiParams params = lhi_from(c);
  lhi::Hs2Config hc;
  hc.epochs = positive_int(c, "epochs");
  hc.batch = positive_int(c, "batch", 2);
  hc.sgd = sgd_from(c);
  hc.step_every = positive_int(c, "step_every", 0);
  hc.gamma = c.get_double("gamma");
  hc.clip_norm = c.get_double("clip_norm");
  hc.augment = c.get_bool("augment");
  hc.seed = derive_seed(seed, 1);
  const int jitter = positive_int(c, "jitter", 0);
  if (hc.batch % 2 != 0) throw UsageError("config key 'batch' must be even");

  const auto data = load_dataset(existing(c, "data"));
  const auto index = index_of(data);
  const fs::path ann_path = existing(c, "annotations");
  const auto annotations = ct::read_annotations(ann_path);
  r.manifest.add_input("annotations", ann_path);
  std::map<std::string, ct::Volume<float>> gray;
  for (const auto& v : data) gray.emplace(v.series_id, ct::masked_gray(v));
  std::vector<lhi::Hs2Sample> samples;
  std::array<std::size_t, 2> counts{0, 0};
  std::mt19937_64 jitter_rng(derive_seed(seed, 3));
  std::uniform_real_distribution<double> unit(-1.0, 1.0), scale(0.8, 1.25);
  auto add = [&](const ct::Candidate& cand, int label) {
    const auto& volume = gray.at(cand.series_id);
    samples.push_back({lhi::candidate_input(volume, cand, params), label});
    ++counts[static_cast<std::size_t>(label)];
    // Detector boxes sit off the annotated centre and size; nodule copies cover that spread.
    for (int k = 0; label == 1 && k < jitter; ++k) {
      ct::Candidate moved = cand;
      for (int a = 0; a < 3; ++a) moved.center[a] += unit(jitter_rng) * cand.diameter / 4;
      moved.diameter *= scale(jitter_rng);
      samples.push_back({lhi::candidate_input(volume, moved, params), label});
      ++counts[1];
    }
  };
  std::map<std::string, std::vector<ct::NoduleAnnotation>> by_series;
  for (const auto& a : annotations) {
    if (!index.contains(a.series_id)) continue;  // annotations of scans outside this split
    by_series[a.series_id].push_back(a);
    add({a.series_id, a.center, a.diameter, 1.0}, 1);
  }
  if (const std::string path = c.get_string("candidates"); !path.empty()) {
    const auto cands = ct::read_candidates(existing(c, "candidates"));
    r.manifest.add_input("candidates", path);
    std::map<std::string, std::vector<ct::Candidate>> grouped;
    for (const auto& cand : cands) {
      find_volume(index, cand.series_id);
      grouped[cand.series_id].push_back(cand);
    }
    for (const auto& [id, list] : grouped) {
      const auto m = eval::match_candidates(list, by_series[id]);
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (m.outcome[i] != eval::Outcome::Duplicate) add(list[i], m.outcome[i] == eval::Outcome::TruePositive ? 1 : 0);
      }
    }
  }
  if (const std::string path = c.get_string("negatives"); !path.empty()) {
    for (const auto& cand : ct::read_candidates(existing(c, "negatives"))) {
      find_volume(index, cand.series_id);
      add(cand, 0);
    }
    r.manifest.add_input("negatives", path);
  }
  r.err << "HS2 samples: " << counts[1] << " nodule, " << counts[0] << " tissue\n";
  if (counts[0] == 0 || counts[1] == 0) throw DataError("HS2 training needs nodule and tissue samples");
  lhi::Hs2Net<float> net(derive_seed(seed, 0));
  std::string log = "epoch,lr,loss,accuracy\n";
  lhi::train_hs2(net, samples, hc, [&](const lhi::Hs2EpochReport& e) {
    log += std::to_string(e.epoch) + "," + ct::format_double(e.lr) + "," + ct::format_double(e.mean_loss) + "," +
           ct::format_double(e.accuracy) + "\n";
    if (e.epoch % 10 == 9 || e.epoch + 1 == hc.epochs) {
      r.err << "hs2 epoch " << e.epoch << " loss " << e.mean_loss << " accuracy " << e.accuracy << "\n";
    }
  });
  state_dict(net).save(r.dir / "hs2.ckpt");
  nlohmann::ordered_json j;
  j["tau"] = params.tau;
  j["threshold"] = params.delta_threshold;
  write_text(r.dir / "lhi.json", j.dump(2) + "\n");
  write_text(r.dir / "log.csv", log);
  for (const char* f : {"hs2.ckpt", "lhi.json", "log.csv"}) r.manifest.add_output(f);
  r.out << "trained HS2 on " << counts[1] << " nodule and " << counts[0] << " tissue samples\n";
}

// ---- filter ---------------------------------------------------------------

void run_filter(Run& r) {
  const Config& c = r.config;
  const fs::path model_dir = existing(c, "model");
  lhi::LhiParams params;
  {
    std::ifstream in(model_dir / "lhi.json");
    if (!in) throw DataError("cannot read " + (model_dir / "lhi.json").string());
    try {
      const auto j = nlohmann::json::parse(in);
      params = {j.at("tau").get<int>(), j.at("threshold").get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw DataError((model_dir / "lhi.json").string() + ": " + e.what());
    }
  }
  const double min_p = c.get_double("min_probability");
  if (min_p < 0 || min_p > 1) throw UsageError("config key 'min_probability' must lie in [0, 1]");
  lhi::Hs2Net<float> net(0);
  load_state_dict(net, Checkpoint::load(model_dir / "hs2.ckpt"), LoadMode::Strict);
  r.manifest.add_input("hs2.ckpt", model_dir / "hs2.ckpt");
  const auto data = load_dataset(existing(c, "data"));
  const auto index = index_of(data);
  const fs::path cand_path = existing(c, "candidates");
  const auto candidates = ct::read_candidates(cand_path);
  r.manifest.add_input("candidates", cand_path);
  std::map<std::string, std::vector<ct::Candidate>> grouped;
  std::vector<std::string> order;
  for (const auto& cand : candidates) {
    find_volume(index, cand.series_id);
    if (!grouped.contains(cand.series_id)) order.push_back(cand.series_id);
    grouped[cand.series_id].push_back(cand);
  }
  std::vector<ct::Candidate> kept;
  for (const auto& id : order) {
    const auto f = lhi::filter_candidates(grouped[id], ct::masked_gray(find_volume(index, id)), net, params, min_p);
    kept.insert(kept.end(), f.begin(), f.end());
  }
  ct::write_candidates(r.dir / "candidates.csv", kept);
  r.manifest.add_output("candidates.csv");
  r.out << "kept " << kept.size() << " of " << candidates.size() << " candidates\n";
}

// ---- eval -----------------------------------------------------------------

void run_eval(Run& r) {
  const Config& c = r.config;
  const fs::path cand_path = existing(c, "candidates"), ann_path = existing(c, "annotations");
  const auto candidates = ct::read_candidates(cand_path);
  const auto annotations = ct::read_annotations(ann_path);
  r.manifest.add_input("candidates", cand_path);
  r.manifest.add_input("annotations", ann_path);
  std::vector<std::string> series;
  std::vector<ct::NoduleAnnotation> scored = annotations;
  if (const std::string s = c.get_string("series"); !s.empty()) {
    series = read_lines(existing(c, "series"));
    r.manifest.add_input("series", s);
    // Annotations of scans outside the evaluated set are dropped.
    std::erase_if(scored, [&](const ct::NoduleAnnotation& a) {
      return std::find(series.begin(), series.end(), a.series_id) == series.end();
    });
  }
  const eval::FrocCurve curve = eval::evaluate(candidates, scored, series);
  eval::emit_report(curve, r.dir);
  r.manifest.set_value("cpm", ct::format_double(curve.cpm));
  for (const auto& p : curve.points) r.out << "FP/scan " << p.fp_per_scan << ": sensitivity " << p.sensitivity << "\n";
  r.out << "CPM " << curve.cpm << " (" << curve.scans << " scans, " << curve.annotations << " nodules, "
        << curve.false_positives << " false positives)\n";
  r.manifest.add_output("froc.csv");
  r.manifest.add_output("froc.svg");
}

// ---- gradcheck ------------------------------------------------------------

void run_gradcheck(Run& r) {
  const Config& c = r.config;
  const double tol = c.get_double("tolerance");
  const auto results = gradcheck_suite(static_cast<std::uint64_t>(c.get_int("seed")), positive_int(c, "samples", 0));
  std::string csv = "check,max_rel_error,checked,skipped\n";
  bool ok = true;
  for (const auto& g : results) {
    const bool pass = g.report.max_rel_error <= tol;
    ok = ok && pass;
    csv += g.name + "," + ct::format_double(g.report.max_rel_error) + "," + std::to_string(g.report.checked) + "," +
           std::to_string(g.report.skipped) + "\n";
    r.out << (pass ? "ok   " : "FAIL ") << g.name << " max relative error " << g.report.max_rel_error << " ("
          << g.report.checked << " coordinates)\n";
  }
  write_text(r.dir / "gradcheck.csv", csv);
  r.manifest.add_output("gradcheck.csv");
  if (!ok) throw DataError("gradient check exceeded tolerance " + ct::format_double(tol));
}

// ---- registry -------------------------------------------------------------

std::vector<KeySpec> sgd_keys(const std::string& lr) {
  return {{"lr", lr, "SGD learning rate"}, {"momentum", "0.9", "SGD momentum"}, {"weight_decay", "5e-4", "L2 weight decay"}};
}

std::vector<KeySpec> join(std::vector<KeySpec> a, const std::vector<KeySpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> list{
      {"synth",
       "generate synthetic chest phantoms with nodule annotations",
       {{"count", "10", "number of scans"},
        {"prefix", "phantom", "series id prefix"},
        {"extent", "64", "cubic extent in voxels (1 mm)"},
        {"nodules", "2", "nodules per scan"},
        {"diameter_min", "12", "smallest nodule diameter, mm"},
        {"diameter_max", "19", "largest nodule diameter, mm"},
        {"vessels", "3", "vessels per scan"},
        {"noise_sigma", "4", "Gaussian noise, gray levels"},
        {"background", "50", "parenchyma gray level"},
        {"tissue_per_scan", "6", "labelled vessel points written to tissue.csv"}},
       true,
       run_synth},
      {"preprocess",
       "window to [0,255], resample to 1 mm, apply lung masks",
       {{"scans", "", "directory of .mhd scans"}, {"masks", "", "directory of lung masks with matching names"}},
       false,
       run_preprocess},
      {"pretext",
       "self-supervised rotation pre-training; exports backbone.ckpt",
       join({{"data", "", "preprocessed directory"},
             {"width", "0.125", "channel width multiplier"},
             {"blocks", "1", "residual blocks per stage"},
             {"tile", "32", "tile side"},
             {"tiles_per_scan", "8", "tiles sampled per scan"},
             {"holdout", "0.2", "fraction of scans held out for accuracy"},
             {"hidden", "64", "classifier hidden width"},
             {"epochs", "3", "training epochs"},
             {"batch", "16", "rotated tiles per step"},
             {"milestones", "2", "epochs at which lr is multiplied by gamma"},
             {"gamma", "0.25", "lr decay factor"},
             {"clip_norm", "5", "gradient norm clip, <= 0 disables"}},
            sgd_keys("0.05")),
       true,
       run_pretext},
      {"train",
       "train the 3-D FPN detector",
       join({{"data", "", "preprocessed directory"},
             {"annotations", "", "annotation CSV"},
             {"init", "", "backbone checkpoint to start from"},
             {"width", "0.125", "channel width multiplier"},
             {"blocks", "1", "residual blocks per stage"},
             {"tile", "64", "training and inference tile side"},
             {"overlap", "16", "inference tile overlap"},
             {"dense_fusion", "true", "add the pooled lower level in the pyramid"},
             {"epochs", "30", "training epochs"},
             {"milestones", "22", "epochs at which lr is multiplied by gamma"},
             {"gamma", "0.1", "lr decay factor"},
             {"accumulate", "4", "tiles per optimizer step"},
             {"clip_norm", "5", "gradient norm clip, <= 0 disables"},
             {"augment", "true", "random crops and flips"}},
            sgd_keys("0.01")),
       true,
       run_train},
      {"detect",
       "run a trained detector over preprocessed scans",
       {{"model", "", "train run directory"},
        {"data", "", "preprocessed directory"},
        {"score_threshold", "0.1", "minimum anchor probability"},
        {"nms_iou", "0.1", "suppression IoU"},
        {"top_k", "2000", "boxes kept per tile before NMS, 0 keeps all"}},
       false,
       run_detect},
      {"lhi",
       "write location history images for candidates",
       {{"data", "", "preprocessed directory"},
        {"candidates", "", "candidate CSV"},
        {"tau", "10", "history length in slices"},
        {"threshold", "15", "gray-level change that counts as motion"},
        {"depth", "11", "slices per patch stack"},
        {"limit", "0", "maximum images, 0 for all"}},
       false,
       run_lhi},
      {"train-hs2",
       "train the LHI classifier on labelled candidates",
       join({{"data", "", "preprocessed directory"},
             {"annotations", "", "annotation CSV (nodule samples)"},
             {"candidates", "", "detector output labelled by matching"},
             {"negatives", "", "candidate CSV of known tissue points"},
             {"tau", "10", "history length in slices"},
             {"threshold", "15", "gray-level change that counts as motion"},
             {"epochs", "60", "training epochs"},
             {"batch", "32", "samples per step, half per class"},
             {"step_every", "45", "epochs between lr decays"},
             {"gamma", "0.1", "lr decay factor"},
             {"clip_norm", "5", "gradient norm clip, <= 0 disables"},
             {"augment", "true", "random flips and quarter turns of the training images"},
             {"jitter", "4", "shifted and rescaled copies per nodule sample"}},
            sgd_keys("0.01")),
       true,
       run_train_hs2},
      {"filter",
       "drop candidates the LHI classifier rejects",
       {{"model", "", "train-hs2 run directory"},
        {"data", "", "preprocessed directory"},
        {"candidates", "", "candidate CSV"},
        {"min_probability", "0.5", "nodule probability needed to keep a candidate"}},
       false,
       run_filter},
      {"eval",
       "FROC and CPM against annotations",
       {{"candidates", "", "candidate CSV"},
        {"annotations", "", "annotation CSV"},
        {"series", "", "file listing the evaluated series ids, one per line"}},
       false,
       run_eval},
      {"gradcheck",
       "finite-difference check of every layer",
       {{"samples", "24", "coordinates per tensor, 0 for all"}, {"tolerance", "1e-4", "maximum relative error"}},
       true,
       run_gradcheck},
  };
  return list;
}

std::vector<KeySpec> full_schema(const Command& cmd) {
  std::vector<KeySpec> keys{{"out", "", "run directory"}};
  if (cmd.seeded) keys.push_back({"seed", "0", "random seed"});
  keys.insert(keys.end(), cmd.keys.begin(), cmd.keys.end());
  return keys;
}

int execute(const Command& cmd, const std::string& config_path, const std::vector<std::string>& sets, std::ostream& out,
            std::ostream& err) {
  Config config(full_schema(cmd));
  try {
    if (!config_path.empty()) config.load(config_path);
    for (const auto& s : sets) config.set(s);
    const fs::path dir = required(config, "out");
    const std::uint64_t seed = cmd.seeded ? static_cast<std::uint64_t>(config.get_int("seed")) : 0;
    fs::create_directories(dir);
    // The run directory is where results go, not part of what was run.
    const std::string canonical = config.canonical({"out"});
    write_text(dir / "config.txt", canonical);
    RunManifest manifest(cmd.name, canonical, seed);
    manifest.add_output("config.txt");
    Run run{config, dir, manifest, out, err};
    cmd.body(run);
    manifest.write(dir);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& c : commands()) n.push_back(c.name);
    return n;
  }();
  return names;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lung nodule detection toolkit", "ndk"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> sets;
  bool show_keys = false;
  for (const auto& cmd : commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.summary);
    sub->add_option("-c,--config", config_path, "configuration file (key = value lines)");
    sub->add_option("-s,--set", sets, "override one key, key=value");
    sub->add_flag("--keys", show_keys, "list configuration keys and exit");
  }
  std::vector<const char*> argv{"ndk"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (const auto& cmd : commands()) {
    if (!app.got_subcommand(cmd.name)) continue;
    if (show_keys) {
      out << describe(full_schema(cmd));
      return kExitOk;
    }
    return execute(cmd, config_path, sets, out, err);
  }
  return kExitUsage;
}

}  // namespace ndk::cli

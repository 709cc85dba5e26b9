#include "leaklab/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "leaklab/errors.hpp"
#include "leaklab/rng.hpp"

namespace leaklab::dataset {

const char* to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::VeryGood: return "VeryGood";
    case ClassLabel::Good: return "Good";
    case ClassLabel::Mediocre: return "Mediocre";
    case ClassLabel::Poor: return "Poor";
    case ClassLabel::VeryPoor: return "VeryPoor";
  }
  return "?";
}

ClassLabel classify_mos(double mos) {
  if (!(mos >= 1.0 && mos <= 5.0))
    throw DomainError("classify_mos: MOS " + std::to_string(mos) + " outside [1, 5]");
  if (mos >= 4.2) return ClassLabel::VeryGood;
  if (mos > 3.4) return ClassLabel::Good;
  if (mos > 2.6) return ClassLabel::Mediocre;
  if (mos > 1.8) return ClassLabel::Poor;
  return ClassLabel::VeryPoor;
}

void GeneratorConfig::validate() const {
  if (n_videos <= 0) throw DomainError("generator: n_videos must be positive");
  if (frames_per_video <= 0) throw DomainError("generator: frames_per_video must be positive");
  if (feature_dim <= 0) throw DomainError("generator: feature_dim must be positive");
  for (double s : {quality_signal_strength, video_nuisance_strength, frame_noise_strength}) {
    if (!std::isfinite(s) || s < 0.0)
      throw DomainError("generator: strengths must be finite and non-negative");
  }
}

std::vector<double> quality_embedding(double q, int dim) {
  std::vector<double> g(static_cast<std::size_t>(dim));
  for (int k = 0; k < dim; ++k) {
    const int p = (k % 3) + 1;
    g[static_cast<std::size_t>(k)] = std::sin(k * q / 5.0) + std::pow(q / 5.0, p);
  }
  return g;
}

namespace {

std::string video_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "v%04d", i);
  return buf;
}

}  // namespace

std::vector<VideoRecord> generate(const GeneratorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const int d = config.feature_dim;
  std::vector<VideoRecord> videos;
  videos.reserve(static_cast<std::size_t>(config.n_videos));
  for (int v = 0; v < config.n_videos; ++v) {
    VideoRecord rec;
    rec.video_id = video_name(v);
    rec.mos = rng.uniform(1.0, 5.0);
    const auto signal = quality_embedding(rec.mos, d);
    std::vector<double> nuisance(static_cast<std::size_t>(d));
    for (auto& x : nuisance) x = rng.normal();
    rec.frames.reserve(static_cast<std::size_t>(config.frames_per_video));
    for (int f = 0; f < config.frames_per_video; ++f) {
      FrameSample frame;
      frame.video_id = rec.video_id;
      frame.frame_index = f;
      frame.raw_features.resize(static_cast<std::size_t>(d));
      for (int k = 0; k < d; ++k) {
        frame.raw_features[static_cast<std::size_t>(k)] =
            config.quality_signal_strength * signal[static_cast<std::size_t>(k)] +
            config.video_nuisance_strength * nuisance[static_cast<std::size_t>(k)] +
            config.frame_noise_strength * rng.normal();
      }
      rec.frames.push_back(std::move(frame));
    }
    videos.push_back(std::move(rec));
  }
  return videos;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

std::vector<VideoRecord> ingest_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ParseError("cannot open manifest: " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  std::vector<VideoRecord> videos;
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_header) {
      if (line != "video_id,mos,frame_file")
        throw ParseError(manifest_path.string() + ": line 1: expected header 'video_id,mos,frame_file'");
      saw_header = true;
      continue;
    }
    const auto cells = split_csv_line(line);
    if (cells.size() != 3)
      throw ParseError(manifest_path.string() + ": line " + std::to_string(lineno) +
                       ": expected 3 fields, got " + std::to_string(cells.size()));
    VideoRecord rec;
    rec.video_id = cells[0];
    double mos = 0.0;
    auto [p, ec] = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), mos);
    if (ec != std::errc())
      throw ParseError(manifest_path.string() + ": line " + std::to_string(lineno) +
                       ": bad MOS value '" + cells[1] + "'");
    if (!(mos >= 1.0 && mos <= 5.0))
      throw DomainError(manifest_path.string() + ": line " + std::to_string(lineno) +
                        ": MOS " + cells[1] + " outside [1, 5]");
    rec.mos = mos;
    std::filesystem::path frame_file = cells[2];
    if (frame_file.is_relative()) frame_file = base / frame_file;
    const Matrix m = read_matrix_file(frame_file);
    if (m.rows() == 0)
      throw ParseError(manifest_path.string() + ": line " + std::to_string(lineno) +
                       ": frame file has no frames: " + frame_file.string());
    for (std::size_t f = 0; f < m.rows(); ++f) {
      FrameSample frame;
      frame.video_id = rec.video_id;
      frame.frame_index = static_cast<int>(f);
      frame.raw_features.assign(m.row(f).begin(), m.row(f).end());
      rec.frames.push_back(std::move(frame));
    }
    videos.push_back(std::move(rec));
  }
  if (!saw_header || videos.empty()) {
    std::cerr << "warning: manifest " << manifest_path.string() << " contains no videos\n";
    return {};
  }
  validate_dataset(videos);
  return videos;
}

void write_manifest(const std::vector<VideoRecord>& videos,
                    const std::filesystem::path& dir, bool csv_frames) {
  std::filesystem::create_directories(dir / "frames");
  std::ofstream out(dir / "manifest.csv");
  if (!out) throw ParseError("cannot write manifest in " + dir.string());
  out << "video_id,mos,frame_file\n";
  out.precision(17);
  for (const auto& v : videos) {
    const std::string ext = csv_frames ? ".csv" : ".bin";
    const std::string rel = "frames/" + v.video_id + ext;
    const Matrix m = frame_matrix(v);
    if (csv_frames)
      write_matrix_csv(dir / rel, m);
    else
      write_matrix_binary(dir / rel, m);
    out << v.video_id << ',' << v.mos << ',' << rel << '\n';
  }
}

std::array<int, kNumClasses> class_histogram(const std::vector<VideoRecord>& videos) {
  std::array<int, kNumClasses> counts{};
  for (const auto& v : videos) counts[static_cast<std::size_t>(class_index(classify_mos(v.mos)))]++;
  return counts;
}

double dominant_class_share(const std::vector<VideoRecord>& videos) {
  if (videos.empty()) throw DomainError("dominant_class_share: empty video list");
  const auto counts = class_histogram(videos);
  const int top = *std::max_element(counts.begin(), counts.end());
  return static_cast<double>(top) / static_cast<double>(videos.size());
}

void validate_dataset(const std::vector<VideoRecord>& videos) {
  std::size_t dim = 0;
  std::map<std::string, int> seen;
  for (const auto& v : videos) {
    if (seen.count(v.video_id))
      throw IntegrityError("duplicate video_id: " + v.video_id);
    seen[v.video_id] = 1;
    if (!(v.mos >= 1.0 && v.mos <= 5.0))
      throw DomainError("video " + v.video_id + ": MOS " + std::to_string(v.mos) + " outside [1, 5]");
    if (v.frames.empty()) throw DomainError("video " + v.video_id + ": no frames");
    std::map<int, int> fseen;
    for (const auto& f : v.frames) {
      if (f.video_id != v.video_id)
        throw IntegrityError("frame of " + v.video_id + " carries id " + f.video_id);
      if (fseen.count(f.frame_index))
        throw IntegrityError("video " + v.video_id + ": duplicate frame_index " +
                             std::to_string(f.frame_index));
      fseen[f.frame_index] = 1;
      if (dim == 0) dim = f.raw_features.size();
      if (f.raw_features.size() != dim)
        throw DomainError("video " + v.video_id + ": inconsistent feature dimension");
    }
  }
}

Matrix frame_matrix(const VideoRecord& video) {
  if (video.frames.empty()) throw DomainError("frame_matrix: video has no frames");
  Matrix m(video.frames.size(), video.frames.front().raw_features.size());
  for (std::size_t f = 0; f < video.frames.size(); ++f) {
    const auto& feats = video.frames[f].raw_features;
    std::copy(feats.begin(), feats.end(), m.row(f).begin());
  }
  return m;
}

}  // namespace leaklab::dataset

// Copyright 2026 The wildslam Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "wildslam/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace wildslam {

namespace {

std::string g9(double v) {
  if (v == 0) v = 0.0;  // never print -0
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// full precision for bundle data, which must round trip exactly
std::string g17(double v) {
  if (v == 0) v = 0.0;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, const std::string& file, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw FormatError(file + ":" + std::to_string(line) + ": bad number '" + s + "'");
  }
}

std::int64_t parse_int(const std::string& s, const std::string& file, int line) {
  std::int64_t v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw FormatError(file + ":" + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

// Locates required columns in a CSV header; unknown extras are accepted
// with a warning (forward compatibility).
std::vector<int> header_columns(const std::string& header,
                                const std::vector<std::string>& required,
                                const std::string& file) {
  const std::vector<std::string> names = split(header, ',');
  std::vector<int> cols(required.size(), -1);
  for (std::size_t c = 0; c < names.size(); ++c) {
    bool known = false;
    for (std::size_t r = 0; r < required.size(); ++r) {
      if (names[c] == required[r]) {
        cols[r] = static_cast<int>(c);
        known = true;
      }
    }
    if (!known)
      std::cerr << "warning: " << file << ": ignoring unknown column '" << names[c]
                << "'\n";
  }
  for (std::size_t r = 0; r < required.size(); ++r)
    if (cols[r] < 0)
      throw FormatError(file + ": missing required column '" + required[r] + "'");
  return cols;
}

std::vector<std::string> read_lines(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return lines;
}

void write_pgm(const FrameMask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.data.data()),
            static_cast<std::streamsize>(mask.data.size()));
}

FrameMask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("missing mask file " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError(path + ": expected binary PGM with maxval 255");
  in.get();  // single whitespace after header
  FrameMask mask;
  mask.width = w;
  mask.height = h;
  mask.data.resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(mask.data.data()),
          static_cast<std::streamsize>(mask.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(mask.data.size()))
    throw FormatError(path + ": truncated pixel data");
  return mask;
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32(out, bits);
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("missing file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
  if (!out) throw FormatError("short write to " + path);
}

void write_tum(const Trajectory& traj, const std::string& path) {
  std::string out;
  out.reserve(traj.points.size() * 80);
  for (const TrajectoryPoint& p : traj.points) {
    out += g9(p.timestamp);
    if (p.registered) {
      const Vec3 c = -(p.pose.q.conjugate() * p.pose.t);
      Quat q = p.pose.q;
      if (q.w() < 0) q.coeffs() = -q.coeffs();
      // store the camera-to-world convention customary for these files
      const Quat qc = q.conjugate();
      out += " " + g9(c.x()) + " " + g9(c.y()) + " " + g9(c.z());
      out += " " + g9(qc.x()) + " " + g9(qc.y()) + " " + g9(qc.z()) + " " + g9(qc.w());
    } else {
      out += " nan nan nan nan nan nan nan";
    }
    out += "\n";
  }
  write_text_file(path, out);
}

Trajectory read_tum(const std::string& path) {
  Trajectory traj;
  const std::vector<std::string> lines = read_lines(path);
  int frame = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    std::string t;
    while (ss >> t) tok.push_back(t);
    if (tok.size() != 8)
      throw FormatError(path + ":" + std::to_string(i + 1) +
                        ": expected 8 fields, got " + std::to_string(tok.size()));
    TrajectoryPoint p;
    p.frame_id = frame++;
    p.timestamp = parse_double(tok[0], path, static_cast<int>(i + 1));
    bool any_nan = false;
    double v[7];
    for (int f = 0; f < 7; ++f) {
      if (tok[f + 1] == "nan" || tok[f + 1] == "-nan") {
        any_nan = true;
        v[f] = std::numeric_limits<double>::quiet_NaN();
      } else {
        v[f] = parse_double(tok[f + 1], path, static_cast<int>(i + 1));
      }
    }
    if (any_nan) {
      p.registered = false;
    } else {
      const Vec3 c(v[0], v[1], v[2]);
      const Quat q_cw(v[6], v[3], v[4], v[5]);  // camera-to-world
      const Quat q = q_cw.conjugate().normalized();
      p.pose = Pose(q, -(q * c));
    }
    if (!traj.points.empty() && p.timestamp <= traj.points.back().timestamp)
      throw FormatError(path + ":" + std::to_string(i + 1) +
                        ": timestamps must be strictly increasing");
    traj.points.push_back(p);
  }
  return traj;
}

void write_descriptors(const std::vector<Descriptor>& descriptors,
                       const std::string& path) {
  std::string out = "WSDB";
  const std::uint32_t dim =
      descriptors.empty() ? 0 : static_cast<std::uint32_t>(descriptors[0].vector.size());
  append_u32(out, dim);
  append_u32(out, static_cast<std::uint32_t>(descriptors.size()));
  for (const Descriptor& d : descriptors) {
    if (d.vector.size() != dim)
      throw InvalidValue("descriptors must share one dimension");
    append_u64(out, static_cast<std::uint64_t>(d.frame_id));
    for (int i = 0; i < d.vector.size(); ++i)
      append_f32(out, static_cast<float>(d.vector[i]));
  }
  write_text_file(path, out);
}

std::vector<Descriptor> read_descriptors(const std::string& path) {
  const std::string data = read_text_file(path);
  auto fail = [&](std::size_t offset, const std::string& what) {
    throw FormatError(path + ": " + what + " at offset " + std::to_string(offset));
  };
  if (data.size() < 12 || data.compare(0, 4, "WSDB") != 0) fail(0, "bad magic");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[off + i])) << (8 * i);
    return v;
  };
  const std::uint32_t dim = u32(4);
  const std::uint32_t count = u32(8);
  const std::size_t record = 8 + 4 * static_cast<std::size_t>(dim);
  if (data.size() != 12 + record * count)
    fail(data.size(), "truncated descriptor data (expected " +
                          std::to_string(12 + record * count) + " bytes)");
  std::vector<Descriptor> out;
  out.reserve(count);
  std::size_t off = 12;
  for (std::uint32_t r = 0; r < count; ++r) {
    Descriptor d;
    std::uint64_t frame = 0;
    for (int i = 0; i < 8; ++i)
      frame |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[off + i]))
               << (8 * i);
    d.frame_id = static_cast<int>(frame);
    off += 8;
    d.vector.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) {
      std::uint32_t bits = u32(off);
      float f;
      std::memcpy(&f, &bits, 4);
      d.vector[i] = f;
      off += 4;
    }
    out.push_back(std::move(d));
  }
  return out;
}

void write_bundle(const DatasetBundle& bundle, const std::string& dir) {
  fs::create_directories(dir);

  std::string frames = "frame_id,timestamp,width,height\n";
  for (const FrameInfo& f : bundle.frames)
    frames += std::to_string(f.id) + "," + g9(f.timestamp) + "," +
              std::to_string(bundle.width) + "," + std::to_string(bundle.height) + "\n";
  write_text_file(dir + "/frames.csv", frames);

  std::string patches = "frame_id,patch_id,u,v,track_id\n";
  for (const BundlePatch& p : bundle.patches)
    patches += std::to_string(p.frame_id) + "," + std::to_string(p.patch_id) + "," +
               g17(p.center.x()) + "," + g17(p.center.y()) + "," +
               std::to_string(p.track_id) + "\n";
  write_text_file(dir + "/patches.csv", patches);

  std::string edges = "src_frame,patch_id,dst_frame,u,v,confidence\n";
  edges.reserve(bundle.edges.size() * 48);
  for (const BundleEdge& e : bundle.edges) {
    edges += std::to_string(e.src_frame);
    edges += ',';
    edges += std::to_string(e.patch_id);
    edges += ',';
    edges += std::to_string(e.dst_frame);
    edges += ',';
    edges += g17(e.observed.x());
    edges += ',';
    edges += g17(e.observed.y());
    edges += ',';
    edges += g17(e.confidence);
    edges += '\n';
  }
  write_text_file(dir + "/edges.csv", edges);

  std::string priors = "frame_id,patch_id,depth\n";
  for (const BundlePrior& p : bundle.priors)
    priors += std::to_string(p.frame_id) + "," + std::to_string(p.patch_id) + "," +
              g17(p.depth) + "\n";
  write_text_file(dir + "/priors.csv", priors);

  fs::create_directories(dir + "/masks");
  for (std::size_t f = 0; f < bundle.masks.size(); ++f) {
    if (bundle.masks[f].empty_mask()) continue;
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%06zu.pgm", f);
    write_pgm(bundle.masks[f], dir + "/masks/" + name);
  }

  write_descriptors(bundle.descriptors, dir + "/descriptors.bin");

  if (!bundle.gt_poses.empty()) {
    Trajectory gt;
    for (std::size_t f = 0; f < bundle.gt_poses.size(); ++f) {
      TrajectoryPoint p;
      p.frame_id = static_cast<int>(f);
      p.timestamp = f < bundle.frames.size() ? bundle.frames[f].timestamp
                                             : static_cast<double>(f);
      p.pose = bundle.gt_poses[f];
      gt.points.push_back(p);
    }
    write_tum(gt, dir + "/gt_traj.txt");
  }

  if (!bundle.world_echo.empty())
    write_text_file(dir + "/world.json", bundle.world_echo);
}

DatasetBundle read_bundle(const std::string& dir) {
  DatasetBundle bundle;

  {
    const std::string file = dir + "/frames.csv";
    const auto lines = read_lines(file);
    if (lines.empty()) throw FormatError(file + ": empty");
    const auto cols =
        header_columns(lines[0], {"frame_id", "timestamp", "width", "height"}, file);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto f = split(lines[i], ',');
      const int line_no = static_cast<int>(i + 1);
      FrameInfo info;
      info.id = static_cast<int>(parse_int(f.at(cols[0]), file, line_no));
      info.timestamp = parse_double(f.at(cols[1]), file, line_no);
      bundle.width = static_cast<int>(parse_int(f.at(cols[2]), file, line_no));
      bundle.height = static_cast<int>(parse_int(f.at(cols[3]), file, line_no));
      bundle.frames.push_back(info);
    }
  }

  {
    const std::string file = dir + "/patches.csv";
    const auto lines = read_lines(file);
    if (lines.empty()) throw FormatError(file + ": empty");
    const auto cols =
        header_columns(lines[0], {"frame_id", "patch_id", "u", "v", "track_id"}, file);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto f = split(lines[i], ',');
      const int line_no = static_cast<int>(i + 1);
      BundlePatch p;
      p.frame_id = static_cast<int>(parse_int(f.at(cols[0]), file, line_no));
      p.patch_id = static_cast<int>(parse_int(f.at(cols[1]), file, line_no));
      p.center.x() = parse_double(f.at(cols[2]), file, line_no);
      p.center.y() = parse_double(f.at(cols[3]), file, line_no);
      p.track_id = parse_int(f.at(cols[4]), file, line_no);
      bundle.patches.push_back(p);
    }
  }

  {
    const std::string file = dir + "/edges.csv";
    const auto lines = read_lines(file);
    if (lines.empty()) throw FormatError(file + ": empty");
    const auto cols = header_columns(
        lines[0], {"src_frame", "patch_id", "dst_frame", "u", "v", "confidence"}, file);
    bundle.edges.reserve(lines.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto f = split(lines[i], ',');
      const int line_no = static_cast<int>(i + 1);
      BundleEdge e;
      e.src_frame = static_cast<int>(parse_int(f.at(cols[0]), file, line_no));
      e.patch_id = static_cast<int>(parse_int(f.at(cols[1]), file, line_no));
      e.dst_frame = static_cast<int>(parse_int(f.at(cols[2]), file, line_no));
      e.observed.x() = parse_double(f.at(cols[3]), file, line_no);
      e.observed.y() = parse_double(f.at(cols[4]), file, line_no);
      e.confidence = parse_double(f.at(cols[5]), file, line_no);
      bundle.edges.push_back(e);
    }
  }

  {
    const std::string file = dir + "/priors.csv";
    const auto lines = read_lines(file);
    if (lines.empty()) throw FormatError(file + ": empty");
    const auto cols = header_columns(lines[0], {"frame_id", "patch_id", "depth"}, file);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto f = split(lines[i], ',');
      const int line_no = static_cast<int>(i + 1);
      BundlePrior p;
      p.frame_id = static_cast<int>(parse_int(f.at(cols[0]), file, line_no));
      p.patch_id = static_cast<int>(parse_int(f.at(cols[1]), file, line_no));
      p.depth = parse_double(f.at(cols[2]), file, line_no);
      bundle.priors.push_back(p);
    }
  }

  bundle.masks.resize(bundle.frames.size());
  for (std::size_t f = 0; f < bundle.frames.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%06zu.pgm", f);
    const std::string path = dir + "/masks/" + name;
    if (fs::exists(path)) bundle.masks[f] = read_pgm(path);
  }

  if (fs::exists(dir + "/descriptors.bin"))
    bundle.descriptors = read_descriptors(dir + "/descriptors.bin");

  if (fs::exists(dir + "/gt_traj.txt")) {
    const Trajectory gt = read_tum(dir + "/gt_traj.txt");
    for (const TrajectoryPoint& p : gt.points) bundle.gt_poses.push_back(p.pose);
  }

  if (fs::exists(dir + "/world.json"))
    bundle.world_echo = read_text_file(dir + "/world.json");

  return bundle;
}

void write_pose_graph(const PoseGraph& graph, const std::string& path) {
  std::string out;
  for (const Sim3Node& n : graph.nodes) {
    const SimPose& s = n.pose;
    out += "NODE " + std::to_string(n.frame_id) + " " + g9(s.s) + " " + g9(s.q.x()) +
           " " + g9(s.q.y()) + " " + g9(s.q.z()) + " " + g9(s.q.w()) + " " +
           g9(s.t.x()) + " " + g9(s.t.y()) + " " + g9(s.t.z()) + "\n";
  }
  for (const Sim3Edge& e : graph.edges) {
    const SimPose& s = e.measurement;
    out += "EDGE " + std::to_string(e.src) + " " + std::to_string(e.dst) + " " +
           (e.kind == EdgeKind::kLoop ? std::string("loop") : std::string("odometry")) +
           " " + g9(s.s) + " " + g9(s.q.x()) + " " + g9(s.q.y()) + " " + g9(s.q.z()) +
           " " + g9(s.q.w()) + " " + g9(s.t.x()) + " " + g9(s.t.y()) + " " +
           g9(s.t.z()) + "\n";
  }
  write_text_file(path, out);
}

PipelineConfig parse_config_text(const std::string& text) {
  PipelineConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    auto as_int = [&](int& field) {
      try {
        field = std::stoi(value);
      } catch (...) {
        throw InvalidValue(key + ": bad integer '" + value + "'");
      }
    };
    auto as_double = [&](double& field) {
      try {
        field = std::stod(value);
      } catch (...) {
        throw InvalidValue(key + ": bad number '" + value + "'");
      }
    };
    auto as_bool = [&](bool& field) {
      if (value == "true" || value == "1")
        field = true;
      else if (value == "false" || value == "0")
        field = false;
      else
        throw InvalidValue(key + ": bad boolean '" + value + "'");
    };

    if (key == "seed") {
      try {
        config.seed = std::stoull(value);
      } catch (...) {
        throw InvalidValue("seed: bad integer '" + value + "'");
      }
    } else if (key == "n_init") {
      as_int(config.n_init);
    } else if (key == "flow_threshold_px") {
      as_double(config.flow_threshold_px);
    } else if (key == "window_size") {
      as_int(config.window_size);
    } else if (key == "patches_per_frame") {
      as_int(config.patches_per_frame);
    } else if (key == "patch_footprint") {
      as_int(config.patch_footprint);
    } else if (key == "mu") {
      as_double(config.mu);
    } else if (key == "huber_delta") {
      as_double(config.huber_delta);
    } else if (key == "keyframe_flow_px") {
      as_double(config.keyframe_flow_px);
    } else if (key == "temporal_exclusion") {
      as_int(config.temporal_exclusion);
    } else if (key == "loop_tau") {
      as_double(config.loop_tau);
    } else if (key == "loop_streak") {
      as_int(config.loop_streak);
    } else if (key == "loop_min_covisible") {
      as_int(config.loop_min_covisible);
    } else if (key == "pgo_cooldown") {
      as_int(config.pgo_cooldown);
    } else if (key == "solver_iterations") {
      as_int(config.solver_iterations);
    } else if (key == "focal_override") {
      as_double(config.focal_override);
    } else if (key == "use_masks") {
      as_bool(config.use_masks);
    } else if (key == "use_loop") {
      as_bool(config.use_loop);
    } else if (key == "post_refine") {
      config.post_refine = value;
    } else if (key == "depth_residual_space") {
      config.depth_residual_space = value;
    } else {
      throw UnknownKey("unknown config key '" + key + "'");
    }
  }
  config.validate();
  return config;
}

PipelineConfig parse_config(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

std::uint64_t fnv1a(const void* data, std::size_t size) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
  const std::string data = read_text_file(path);
  return fnv1a(data.data(), data.size());
}

std::uint64_t bundle_digest(const DatasetBundle& bundle) {
  std::string blob;
  auto put = [&](const void* p, std::size_t n) {
    blob.append(static_cast<const char*>(p), n);
  };
  put(&bundle.width, sizeof bundle.width);
  put(&bundle.height, sizeof bundle.height);
  for (const FrameInfo& f : bundle.frames) put(&f.timestamp, sizeof f.timestamp);
  for (const BundlePatch& p : bundle.patches) {
    put(p.center.data(), 16);
    put(&p.track_id, sizeof p.track_id);
  }
  for (const BundleEdge& e : bundle.edges) put(e.observed.data(), 16);
  for (const BundlePrior& p : bundle.priors) put(&p.depth, sizeof p.depth);
  for (const Descriptor& d : bundle.descriptors)
    put(d.vector.data(), sizeof(double) * d.vector.size());
  for (const FrameMask& m : bundle.masks)
    if (!m.empty_mask()) put(m.data.data(), m.data.size());
  return fnv1a(blob.data(), blob.size());
}

}  // namespace wildslam

#include "mds/trace_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mds/error.hpp"

namespace mds {

namespace {

void append_fixed(std::string& out, double v) {
  char buf[64];
  // -0.000000 would not re-parse to the same bits as 0.0; normalize it.
  if (v == 0.0) v = 0.0;
  int n = std::snprintf(buf, sizeof buf, "%.6f", v);
  if (std::string_view(buf, static_cast<std::size_t>(n)) == "-0.000000") {
    out += "0.000000";
    return;
  }
  out.append(buf, static_cast<std::size_t>(n));
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s) {
  std::string tmp(s);
  char* end = nullptr;
  double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size()) {
    throw RejectedRecord("malformed number '" + tmp + "'");
  }
  return v;
}

}  // namespace

std::string format_trace_row(const BsmRecord& r) {
  if (r.true_sender_id.find(',') != std::string::npos || r.pseudo_id.find(',') != std::string::npos) {
    throw RejectedRecord("identities must not contain commas");
  }
  std::string out;
  out.reserve(200);
  append_fixed(out, r.recv_time);
  out += ',';
  append_fixed(out, r.send_time);
  out += ',';
  out += r.true_sender_id;
  out += ',';
  out += r.pseudo_id;
  for (const Vec3* v : {&r.pos, &r.spd, &r.acl, &r.hed}) {
    for (double c : *v) {
      out += ',';
      append_fixed(out, c);
    }
  }
  out += ',';
  out += std::to_string(r.label);
  out += ',';
  out += to_string(r.attack_type);
  return out;
}

BsmRecord parse_trace_row(const std::string& line) {
  std::string_view sv(line);
  if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
  auto cols = split(sv, ',');
  if (cols.size() != 18) {
    throw RejectedRecord("expected 18 columns, got " + std::to_string(cols.size()));
  }
  BsmRecord r;
  r.recv_time = parse_double(cols[0]);
  r.send_time = parse_double(cols[1]);
  r.true_sender_id = std::string(cols[2]);
  r.pseudo_id = std::string(cols[3]);
  std::size_t c = 4;
  for (Vec3* v : {&r.pos, &r.spd, &r.acl, &r.hed}) {
    for (double& x : *v) x = parse_double(cols[c++]);
  }
  if (cols[16] == "0") r.label = 0;
  else if (cols[16] == "1") r.label = 1;
  else throw RejectedRecord("label must be 0 or 1");
  auto at = attack_type_from_string(cols[17]);
  if (!at) throw RejectedRecord("unknown attack type '" + std::string(cols[17]) + "'");
  r.attack_type = *at;
  validate(r);
  return r;
}

void write_trace_csv(std::ostream& out, const std::vector<BsmRecord>& records) {
  out << kTraceCsvHeader << '\n';
  for (const auto& r : records) out << format_trace_row(r) << '\n';
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<BsmRecord>& records) {
  std::ostringstream ss;
  write_trace_csv(ss, records);
  write_file_atomic(path, ss.str());
}

std::vector<BsmRecord> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw RejectedRecord("empty trace file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceCsvHeader) throw RejectedRecord("unexpected trace header");
  std::vector<BsmRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_trace_row(line));
    } catch (const RejectedRecord& e) {
      throw RejectedRecord("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<BsmRecord> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RejectedRecord("cannot open trace " + path.string());
  return read_trace_csv(in);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + tmp.string());
    out << contents;
    if (!out) throw Error("io", "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mds

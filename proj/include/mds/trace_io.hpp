#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mds/trace.hpp"

namespace mds {

inline constexpr const char* kTraceCsvHeader =
    "recv_time,send_time,sender,pseudo,pos_x,pos_y,pos_z,spd_x,spd_y,spd_z,acl_x,acl_y,acl_z,"
    "hed_x,hed_y,hed_z,label,attack_type";

std::string format_trace_row(const BsmRecord& r);
BsmRecord parse_trace_row(const std::string& line);

void write_trace_csv(std::ostream& out, const std::vector<BsmRecord>& records);
void write_trace_csv(const std::filesystem::path& path, const std::vector<BsmRecord>& records);
std::vector<BsmRecord> read_trace_csv(std::istream& in);
std::vector<BsmRecord> read_trace_csv(const std::filesystem::path& path);

// Writes via a temporary sibling and renames, so readers never see half a file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace mds

#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

namespace sdfsur {

// 17 significant digits: round-trips any double exactly through text.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep);
double parse_double(const std::string& s);
long parse_long(const std::string& s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

uint64_t fnv1a64(const std::string& bytes);
std::string hash_hex(const std::string& bytes);
uint64_t file_hash(const std::string& path);

// Log level from SDF_SURROGATE_LOG (quiet | info | debug), default info.
// Messages go to stderr.
int log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// Runs fn(0..n-1) on up to `jobs` worker threads. Items must only write
// state owned by their own index. If items throw, the exception of the
// lowest-index failing item is rethrown after all workers finish.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace sdfsur

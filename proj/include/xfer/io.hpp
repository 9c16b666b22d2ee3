#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xfer/mdp.hpp"

// Byte-stable text formats shared by every experiment family.
namespace xfer::io {

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);

/// ASCII PGM: "P2\n<w> <h>\n255\n", one line per row, min-max scaled with
/// round-half-up; a constant field maps to 128.
std::string pgm_string(std::span<const double> values, std::size_t width, std::size_t height);
void write_pgm(std::span<const double> values, std::size_t width, std::size_t height,
               const std::filesystem::path& path);

/// One {"states": [...], "actions": [...]} object per line.
std::string trajectories_jsonl(std::span<const mdp::Trajectory> trajectories);
std::vector<mdp::Trajectory> parse_trajectories_jsonl(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);

}  // namespace xfer::io

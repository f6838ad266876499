#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "deepseq/circuit.hpp"

namespace dseq {

/// Reads ASCII AIGER ("aag"). Inverted literals become explicit NOT nodes,
/// one per inverted variable. Latches become FFs wired to their next-state
/// literal. Literal 0 maps to a PI pinned to constant false.
CircuitGraph parse_aiger(std::string_view text);

/// Writes ASCII AIGER. NOT nodes fold back into inverted literals.
std::string emit_aiger(const CircuitGraph& g);

/// Reads the ISCAS BENCH subset (INPUT, OUTPUT, DFF, AND, NAND, OR, NOR,
/// NOT); BUF is not accepted. Gates are lowered to AND/NOT; nodes created by
/// lowering carry names starting with '$'.
CircuitGraph parse_bench(std::string_view text);

/// True when the node carries a net name from the source netlist rather
/// than a synthesized lowering name.
bool has_original_name(const CircuitGraph& g, NodeId v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Dispatches on extension: ".aag" or ".bench".
CircuitGraph load_circuit(const std::filesystem::path& path);

}  // namespace dseq

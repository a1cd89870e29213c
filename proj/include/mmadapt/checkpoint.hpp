#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "mmadapt/model.hpp"

namespace mmadapt::io {

// Little-endian primitives shared by checkpoints and corpus files.
void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_string(std::ostream& os, const std::string& s);
void write_tensor_payload(std::ostream& os, const Tensor& t);
uint16_t read_u16(std::istream& is);
uint32_t read_u32(std::istream& is);
std::string read_string(std::istream& is);
Tensor read_tensor_payload(std::istream& is);

// Checkpoint file: magic "ADPL", format version u16, count-prefixed table of
// (group name, tensor name, shape, raw little-endian scalars). Round-trips
// bit-exactly.
void save_checkpoint(const model::MultimodalModel& m, const std::string& path);

// Loads into an already-built model; group/tensor names and shapes must match.
void load_checkpoint(model::MultimodalModel& m, const std::string& path);

}  // namespace mmadapt::io

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "spnn/diffusion.hpp"
#include "spnn/model.hpp"

namespace spnn::ckpt {

// Container layout: 8-byte magic, u64 manifest length, manifest JSON, then a
// blob of tensor records. Each record is two little-endian u64 dims followed
// by row-major little-endian f64 data; the manifest's tensor table carries
// {name, rows, cols, offset-into-blob}. Save(load(file)) is bit-identical.

void save_model(const SpnnModel& m, const nlohmann::json& config_echo, std::uint64_t seed,
                const std::string& path);
SpnnModel load_model(const std::string& path, nlohmann::json* config_echo = nullptr,
                     std::uint64_t* seed = nullptr);

void save_denoiser(const diffusion::Denoiser& den, const nlohmann::json& config_echo,
                   std::uint64_t seed, const std::string& path);
diffusion::Denoiser load_denoiser(const std::string& path,
                                  nlohmann::json* config_echo = nullptr,
                                  std::uint64_t* seed = nullptr);

// Standalone matrix file: two u64 dims + f64 data, same record shape the
// checkpoint blob uses.
void save_matrix(const linalg::Mat& m, const std::string& path);
linalg::Mat load_matrix(const std::string& path);

}  // namespace spnn::ckpt

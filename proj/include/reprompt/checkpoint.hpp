#pragma once

#include <filesystem>

#include "reprompt/training.hpp"

namespace reprompt {

/// Checkpoint layout: "RPCK" magic, version, named scalar config records
/// (training config plus encoder construction scalars), then one named
/// float32 section per learnable tensor.
void save_checkpoint(const std::filesystem::path& path, Model& model);

/// Rebuilds the model from the stored config and the database (for adapter
/// labels), then overwrites every learnable with the stored section.
Model load_checkpoint(const std::filesystem::path& path, const RetrievalDatabase& db);

}  // namespace reprompt

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "resee/corpus.hpp"
#include "resee/dataset_builder.hpp"
#include "resee/image_ref.hpp"

namespace resee::testing {

std::filesystem::path data_path(std::string_view name);

/// Fresh, empty directory under the build tree.
std::filesystem::path scratch_dir(std::string_view name);

std::string read_text(const std::filesystem::path& path);

corpus::Turn turn(std::size_t index, std::string text);

ImageRef image(std::string locator, Provider provider = Provider::kMock);

/// Runs the whole data pipeline (retrieval, entity images from the mock
/// provider, assembly) over the fixture copy corpus: 32 examples whose
/// response repeats the last context turn.
std::vector<data::MultimodalExample> copy_task_examples();

}  // namespace resee::testing

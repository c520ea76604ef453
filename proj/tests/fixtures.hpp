#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "embedeval/embedeval.hpp"

namespace fixtures {

// d1=(1,0), d2=(0,1), d3=(0.70711,0.70711)
// q1=(0.6,0.8) gold d2, q2=(1,0) gold d2, q3=(0.70711,0.70711) gold d3
struct Toy {
  embedeval::QACorpus corpus;
  embedeval::EmbeddingMatrix documents;
  embedeval::EmbeddingMatrix questions;
};

inline Toy toy() {
  using namespace embedeval;
  return {QACorpus({{"d1", "one"}, {"d2", "two"}, {"d3", "three"}},
                   {{"q1", "first", "d2"}, {"q2", "second", "d2"}, {"q3", "third", "d3"}}),
          EmbeddingMatrix({"d1", "d2", "d3"}, 2, {1.0f, 0.0f, 0.0f, 1.0f, 0.70711f, 0.70711f}, true),
          EmbeddingMatrix({"q1", "q2", "q3"}, 2, {0.6f, 0.8f, 1.0f, 0.0f, 0.70711f, 0.70711f}, true)};
}

/// One bootstrap sample covering every question once.
inline embedeval::BootstrapPlan identity_plan(std::size_t q) {
  embedeval::BootstrapPlan plan{0, q, q, {std::vector<std::uint32_t>(q)}};
  for (std::size_t i = 0; i < q; ++i) plan.samples[0][i] = static_cast<std::uint32_t>(i);
  return plan;
}

class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("embedeval_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

/// Writes a synthetic instance to disk and returns pipeline inputs for it.
inline embedeval::PipelineInputs write_synth(const TempDir& dir, const embedeval::SynthSpec& spec) {
  const auto data = embedeval::generate(spec);
  embedeval::save_synth(data, dir.path().string());
  return {dir.file("docs.jsonl"), dir.file("questions.jsonl"), dir.file("docs.emb"), dir.file("questions.emb"),
          embedeval::EmbeddingFormat::automatic};
}

}  // namespace fixtures

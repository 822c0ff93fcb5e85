#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace caplevel {

enum class errc {
  // file formats
  bad_magic,
  bad_header,
  truncated_file,
  trailing_data,
  non_finite_value,
  zero_norm_row,
  malformed_line,
  duplicate_caption_id,
  empty_text,
  io_error,
  // cross-file consistency
  missing_query,
  row_out_of_range,
  dim_mismatch,
  coverage_mismatch,
  too_few_sets,
  missing_score,
  // parameters
  invalid_argument,
  k_too_large,
  n_too_large,
  prompt_count_too_large,
  depth_too_small,
  config_error,
  // numerical degeneracy
  zero_matrix,
  zero_norm_result,
  rerank_degenerate,
  empty_corpus,
  empty_refs,
  internal,
};

inline std::string_view errc_name(errc code) noexcept {
  switch (code) {
    case errc::bad_magic: return "BadMagic";
    case errc::bad_header: return "BadHeader";
    case errc::truncated_file: return "TruncatedFile";
    case errc::trailing_data: return "TrailingData";
    case errc::non_finite_value: return "NonFiniteValue";
    case errc::zero_norm_row: return "ZeroNormRow";
    case errc::malformed_line: return "MalformedLine";
    case errc::duplicate_caption_id: return "DuplicateCaptionId";
    case errc::empty_text: return "EmptyText";
    case errc::io_error: return "IOError";
    case errc::missing_query: return "MissingQuery";
    case errc::row_out_of_range: return "RowOutOfRange";
    case errc::dim_mismatch: return "DimMismatch";
    case errc::coverage_mismatch: return "CoverageMismatch";
    case errc::too_few_sets: return "TooFewSets";
    case errc::missing_score: return "MissingScore";
    case errc::invalid_argument: return "InvalidArgument";
    case errc::k_too_large: return "KTooLarge";
    case errc::n_too_large: return "NTooLarge";
    case errc::prompt_count_too_large: return "PromptCountTooLarge";
    case errc::depth_too_small: return "DepthTooSmall";
    case errc::config_error: return "ConfigError";
    case errc::zero_matrix: return "ZeroMatrix";
    case errc::zero_norm_result: return "ZeroNormResult";
    case errc::rerank_degenerate: return "RerankDegenerate";
    case errc::empty_corpus: return "EmptyCorpus";
    case errc::empty_refs: return "EmptyRefs";
    case errc::internal: return "Internal";
  }
  return "Unknown";
}

/// Process exit codes used by the command line front end.
enum class exit_status : int {
  ok = 0,
  config = 2,
  io = 3,
  consistency = 4,
  internal = 5,
};

inline exit_status exit_status_for(errc code) noexcept {
  switch (code) {
    case errc::bad_magic:
    case errc::bad_header:
    case errc::truncated_file:
    case errc::trailing_data:
    case errc::non_finite_value:
    case errc::zero_norm_row:
    case errc::malformed_line:
    case errc::duplicate_caption_id:
    case errc::empty_text:
    case errc::io_error:
    case errc::empty_corpus:
      return exit_status::io;
    case errc::missing_query:
    case errc::row_out_of_range:
    case errc::dim_mismatch:
    case errc::coverage_mismatch:
    case errc::too_few_sets:
    case errc::missing_score:
    case errc::empty_refs:
      return exit_status::consistency;
    case errc::invalid_argument:
    case errc::k_too_large:
    case errc::n_too_large:
    case errc::prompt_count_too_large:
    case errc::depth_too_small:
    case errc::config_error:
      return exit_status::config;
    case errc::zero_matrix:
    case errc::zero_norm_result:
    case errc::rerank_degenerate:
    case errc::internal:
      return exit_status::internal;
  }
  return exit_status::internal;
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

}  // namespace caplevel

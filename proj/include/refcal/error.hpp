#pragma once

#include <stdexcept>
#include <string>

namespace refcal {

/// Error codes for every named failure mode in the toolkit. The CLI maps
/// these onto process exit codes.
enum class ErrorCode {
    zero_vector,
    not_unit_norm,
    empty_positive_set,
    empty_negative_set,
    non_positive_temperature,
    label_out_of_range,
    epsilon_out_of_range,
    negative_gamma,
    bound_violation,
    empty_batch,
    too_few_samples,
    non_positive_bandwidth,
    degenerate_split,
    empty_scores,
    shape_mismatch,
    empty_validation,
    invalid_imbalance,
    severity_out_of_range,
    incomplete_map,
    empty_group,
    row_argmax_mismatch,
    row_not_stochastic,
    empty_split,
    config_invalid,
    parse_error,
    io_error,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

}  // namespace refcal

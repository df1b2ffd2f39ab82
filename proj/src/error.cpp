#include "refcal/error.hpp"

namespace refcal {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::zero_vector: return "ZeroVector";
        case ErrorCode::not_unit_norm: return "NotUnitNorm";
        case ErrorCode::empty_positive_set: return "EmptyPositiveSet";
        case ErrorCode::empty_negative_set: return "EmptyNegativeSet";
        case ErrorCode::non_positive_temperature: return "NonPositiveTemperature";
        case ErrorCode::label_out_of_range: return "LabelOutOfRange";
        case ErrorCode::epsilon_out_of_range: return "EpsilonOutOfRange";
        case ErrorCode::negative_gamma: return "NegativeGamma";
        case ErrorCode::bound_violation: return "BoundViolation";
        case ErrorCode::empty_batch: return "EmptyBatch";
        case ErrorCode::too_few_samples: return "TooFewSamples";
        case ErrorCode::non_positive_bandwidth: return "NonPositiveBandwidth";
        case ErrorCode::degenerate_split: return "DegenerateSplit";
        case ErrorCode::empty_scores: return "EmptyScores";
        case ErrorCode::shape_mismatch: return "ShapeMismatch";
        case ErrorCode::empty_validation: return "EmptyValidation";
        case ErrorCode::invalid_imbalance: return "InvalidImbalance";
        case ErrorCode::severity_out_of_range: return "SeverityOutOfRange";
        case ErrorCode::incomplete_map: return "IncompleteMap";
        case ErrorCode::empty_group: return "EmptyGroup";
        case ErrorCode::row_argmax_mismatch: return "RowArgmaxMismatch";
        case ErrorCode::row_not_stochastic: return "RowNotStochastic";
        case ErrorCode::empty_split: return "EmptySplit";
        case ErrorCode::config_invalid: return "ConfigInvalid";
        case ErrorCode::parse_error: return "ParseError";
        case ErrorCode::io_error: return "IoError";
    }
    return "UnknownError";
}

}  // namespace refcal

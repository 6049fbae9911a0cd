#pragma once

#include <stdexcept>
#include <string>

namespace mdlm {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MDLM_DEFINE_ERROR(Name, Base)   \
    class Name : public Base {          \
    public:                             \
        using Base::Base;               \
    }

MDLM_DEFINE_ERROR(OverlapError, Error);
MDLM_DEFINE_ERROR(LengthError, Error);
MDLM_DEFINE_ERROR(LengthMismatch, Error);
MDLM_DEFINE_ERROR(CapExceeded, Error);
MDLM_DEFINE_ERROR(EmptyData, Error);
MDLM_DEFINE_ERROR(EmptyCandidates, Error);
MDLM_DEFINE_ERROR(NoProgress, Error);
MDLM_DEFINE_ERROR(InconsistentTrace, Error);
MDLM_DEFINE_ERROR(SupportMismatch, Error);
MDLM_DEFINE_ERROR(ConfigError, Error);

// Everything raised while talking to a model.
MDLM_DEFINE_ERROR(ModelError, Error);
MDLM_DEFINE_ERROR(DegenerateConditional, ModelError);
MDLM_DEFINE_ERROR(ProtocolError, ModelError);
MDLM_DEFINE_ERROR(TimeoutError, ModelError);
MDLM_DEFINE_ERROR(ServerError, ModelError);

#undef MDLM_DEFINE_ERROR

}  // namespace mdlm

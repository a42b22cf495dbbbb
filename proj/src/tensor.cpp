#include "tasif/tensor.hpp"

namespace tasif {

thread_local Tape* Tape::active_ = nullptr;

}  // namespace tasif

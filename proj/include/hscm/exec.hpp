#pragma once

namespace hscm {

/// Selects the OpenMP kernels or their serial reference versions. Both
/// produce bitwise identical results; the serial path exists for testing and
/// benchmarking.
enum class ExecPolicy { serial, parallel };

}  // namespace hscm

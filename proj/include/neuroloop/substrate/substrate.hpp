#pragma once

#include <cstdint>

#include "neuroloop/codec/decode.hpp"
#include "neuroloop/codec/raster.hpp"
#include "neuroloop/core/error.hpp"

namespace neuroloop::substrate {

using codec::Recording;
using codec::ResponseMatrix;
using codec::SpikeMatrix;
using codec::StimulationMatrix;

struct Capabilities {
  bool emits_spikes_directly = true;
  bool adaptive = false;
};

/// The biological transformation behind a stimulate / record contract.
///
/// Every implementation owns its state and random stream, advances a virtual
/// clock in whole milliseconds and is deterministic given its seed and the
/// full sequence of calls.
class Substrate {
 public:
  virtual ~Substrate() = default;

  virtual Capabilities capabilities() const = 0;
  virtual std::size_t channels() const = 0;
  virtual std::uint64_t clock_ms() const = 0;

  // Delivers `stim` from the start of a `record_ms` window and returns the
  // activity recorded over the whole window. record_ms >= stim.bins().
  Recording stimulate(const StimulationMatrix& stim, std::uint64_t record_ms) {
    if (stim.channels() != channels())
      throw ContractError("stimulation has " + std::to_string(stim.channels()) + " channels, substrate has " +
                          std::to_string(channels()));
    if (record_ms < stim.bins()) throw ContractError("recording window shorter than stimulation");
    return do_stimulate(stim, record_ms);
  }

  // Recording with no stimulation.
  Recording spontaneous(std::uint64_t duration_ms) {
    if (duration_ms == 0) throw PreconditionError("spontaneous window must be positive");
    return do_stimulate(StimulationMatrix(channels(), 0, 0.0, 0.0), duration_ms);
  }

  // Advances the dynamics without recording.
  virtual void rest(std::uint64_t duration_ms) = 0;

 protected:
  virtual Recording do_stimulate(const StimulationMatrix& stim, std::uint64_t record_ms) = 0;
};

}  // namespace neuroloop::substrate

#pragma once

#include "neuroloop/core/error.hpp"
#include "neuroloop/core/hash.hpp"
#include "neuroloop/core/log.hpp"
#include "neuroloop/core/rng.hpp"
#include "neuroloop/core/stats.hpp"

#include "neuroloop/env/gridworld.hpp"
#include "neuroloop/env/oracle.hpp"

#include "neuroloop/codec/decode.hpp"
#include "neuroloop/codec/encode.hpp"
#include "neuroloop/codec/layout.hpp"
#include "neuroloop/codec/raster.hpp"
#include "neuroloop/feedback.hpp"

#include "neuroloop/substrate/factory.hpp"

#include "neuroloop/loop/trial.hpp"

#include "neuroloop/optimizer/client.hpp"
#include "neuroloop/optimizer/grid.hpp"
#include "neuroloop/optimizer/runner.hpp"
#include "neuroloop/optimizer/select.hpp"
#include "neuroloop/optimizer/server.hpp"
#include "neuroloop/optimizer/study.hpp"

#include "neuroloop/dqn/qnet.hpp"
#include "neuroloop/dqn/train.hpp"

#include "neuroloop/analysis/brunner_munzel.hpp"
#include "neuroloop/analysis/distributions.hpp"
#include "neuroloop/analysis/frame.hpp"

#pragma once

// Umbrella header: the whole library.

#include "rfn/error.hpp"
#include "rfn/random.hpp"
#include "rfn/diffcore/array.hpp"
#include "rfn/diffcore/tape.hpp"
#include "rfn/diffcore/ops.hpp"
#include "rfn/diffcore/primitives.hpp"
#include "rfn/diffcore/parameters.hpp"
#include "rfn/diffcore/optim.hpp"
#include "rfn/diffcore/checkpoint.hpp"
#include "rfn/geodata/trips.hpp"
#include "rfn/geodata/histogram.hpp"
#include "rfn/geodata/dataset.hpp"
#include "rfn/flows/flow.hpp"
#include "rfn/recurrent/layers.hpp"
#include "rfn/recurrent/gaussian.hpp"
#include "rfn/recurrent/lstm.hpp"
#include "rfn/models/config.hpp"
#include "rfn/models/mdn.hpp"
#include "rfn/models/model.hpp"
#include "rfn/models/inference.hpp"
#include "rfn/models/train.hpp"
#include "rfn/evalsuite/grid.hpp"
#include "rfn/evalsuite/suite.hpp"
#include "rfn/synthgen/oracle.hpp"
#include "rfn/cli/run.hpp"

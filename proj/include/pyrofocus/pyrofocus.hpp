#pragma once

#include "pyrofocus/diagnostics.hpp"
#include "pyrofocus/experiment.hpp"
#include "pyrofocus/loss.hpp"
#include "pyrofocus/pipeline.hpp"
#include "pyrofocus/schedule.hpp"
#include "pyrofocus/simulator.hpp"

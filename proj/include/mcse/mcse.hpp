#pragma once

#include "common.hpp"
#include "keyvalue.hpp"
#include "netmodel.hpp"
#include "powerflow.hpp"
#include "linearize.hpp"
#include "datamatrix.hpp"
#include "solver.hpp"
#include "wls.hpp"
#include "bench.hpp"
#include "config.hpp"

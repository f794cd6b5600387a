#pragma once

// Umbrella header.

#include "smp/errors.hpp"
#include "smp/hilbert.hpp"
#include "smp/parallel.hpp"
#include "smp/stats.hpp"
#include "smp/martingale.hpp"
#include "smp/dynamics.hpp"
#include "smp/adjoint.hpp"
#include "smp/pmp.hpp"
#include "smp/report.hpp"
#include "smp/examples.hpp"
#include "smp/config.hpp"
#include "smp/run.hpp"

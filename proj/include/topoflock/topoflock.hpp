#pragma once

#include "topoflock/error.hpp"
#include "topoflock/kernel.hpp"
#include "topoflock/ensemble.hpp"
#include "topoflock/dynamics.hpp"
#include "topoflock/metrics/measure.hpp"
#include "topoflock/metrics/transport.hpp"
#include "topoflock/metrics/line.hpp"
#include "topoflock/metrics/discrepancy.hpp"
#include "topoflock/metrics/test_function.hpp"
#include "topoflock/meanfield.hpp"
#include "topoflock/harness.hpp"

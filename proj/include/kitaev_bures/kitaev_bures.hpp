#pragma once

#include "errors.hpp"
#include "spectrum.hpp"
#include "bures.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "thermal_metric.hpp"
#include "scaling.hpp"

#pragma once

#include "sfldp/action.hpp"
#include "sfldp/averaging.hpp"
#include "sfldp/deviation.hpp"
#include "sfldp/errors.hpp"
#include "sfldp/experiments.hpp"
#include "sfldp/io.hpp"
#include "sfldp/parallel.hpp"
#include "sfldp/path.hpp"
#include "sfldp/slowfast.hpp"
#include "sfldp/spectral.hpp"
#include "sfldp/stats.hpp"
#include "sfldp/stochastic.hpp"
#include "sfldp/superslow.hpp"

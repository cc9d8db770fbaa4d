#pragma once

#include "sqar/bootstrap.hpp"
#include "sqar/distributions.hpp"
#include "sqar/error.hpp"
#include "sqar/estimator.hpp"
#include "sqar/io.hpp"
#include "sqar/lp.hpp"
#include "sqar/parallel.hpp"
#include "sqar/quantile_lp.hpp"
#include "sqar/reparam.hpp"
#include "sqar/simulation.hpp"
#include "sqar/spatial.hpp"

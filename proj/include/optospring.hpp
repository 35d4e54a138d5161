#pragma once

#include "optospring/coherence.hpp"
#include "optospring/config.hpp"
#include "optospring/constants.hpp"
#include "optospring/csv.hpp"
#include "optospring/dynamics.hpp"
#include "optospring/error.hpp"
#include "optospring/model.hpp"
#include "optospring/rate_law.hpp"
#include "optospring/response.hpp"
#include "optospring/spectra.hpp"

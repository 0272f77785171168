# Empty file - makes tests directory a Python package

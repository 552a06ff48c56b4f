# Empty file to make discretization a package

# Empty file to make solvers a package

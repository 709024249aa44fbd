from gridgauss.app.main import main

main()
